use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    #[default]
    UniformFanIn,
    /// Everything zero.
    Zeros,
}

/// Deterministic parameter initializer; weights are drawn in call order.
pub struct Initializer {
    rng: ChaCha8Rng,
    scheme: InitScheme,
}

impl Initializer {
    pub fn new(seed: u64, scheme: InitScheme) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scheme,
        }
    }

    pub fn bound(fan_in: usize) -> f64 {
        (6.0 / fan_in as f64).sqrt()
    }

    /// `fan_in x fan_out` weight block.
    pub fn weight(&mut self, fan_in: usize, fan_out: usize) -> Result<DenseMatrix> {
        check_width(fan_in)?;
        check_width(fan_out)?;
        match self.scheme {
            InitScheme::Zeros => Ok(DenseMatrix::zeros(fan_in, fan_out)),
            InitScheme::UniformFanIn => {
                let a = Self::bound(fan_in);
                let data = (0..fan_in * fan_out)
                    .map(|_| self.rng.random_range(-a..=a))
                    .collect();
                DenseMatrix::new(fan_in, fan_out, data)
            }
        }
    }

    pub fn bias(&mut self, width: usize) -> Result<DenseMatrix> {
        check_width(width)?;
        Ok(DenseMatrix::zeros(1, width))
    }
}

fn check_width(w: usize) -> Result<()> {
    if w == 0 {
        return Err(Error::invalid("layer width must be at least 1"));
    }
    Ok(())
}
