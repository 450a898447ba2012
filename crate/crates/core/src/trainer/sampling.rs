use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::dynamics::BoxSet;
use crate::error::{Error, Result};

/// Initial-condition distribution over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    /// Normal around the box center, each coordinate resampled until it
    /// lands inside the box. Standard deviation is `std_scale` times the
    /// box half-width.
    TruncatedNormal {
        #[serde(default = "default_std_scale")]
        std_scale: f64,
    },
    Uniform,
}

fn default_std_scale() -> f64 {
    0.5
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::TruncatedNormal {
            std_scale: default_std_scale(),
        }
    }
}

/// `m x n_x` matrix of initial states plus the law they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub states: DenseMatrix,
    pub distribution: Distribution,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    /// Splits off consecutive blocks of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<SampleSet>> {
        if sizes.iter().sum::<usize>() > self.len() {
            return Err(Error::invalid(format!("cannot split {} samples into {sizes:?}", self.len())));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&n| {
                let idx: Vec<usize> = (start..start + n).collect();
                start += n;
                SampleSet {
                    states: self.states.select_rows(&idx),
                    distribution: self.distribution,
                }
            })
            .collect())
    }
}

/// Draws `m` i.i.d. states from `dist` restricted to `bounds`.
pub fn sample_initial_conditions(dist: Distribution, m: usize, bounds: &BoxSet, seed: u64) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::invalid("need at least one initial condition"));
    }
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bounds.dim();
    let mut data = Vec::with_capacity(m * n);
    match dist {
        Distribution::Uniform => {
            for _ in 0..m {
                for (lo, hi) in bounds.lo.iter().zip(&bounds.hi) {
                    data.push(if lo == hi { *lo } else { rng.random_range(*lo..=*hi) });
                }
            }
        }
        Distribution::TruncatedNormal { std_scale } => {
            if !(std_scale > 0.0) {
                return Err(Error::Config(format!("std_scale must be positive, got {std_scale}")));
            }
            let normals = bounds
                .center()
                .into_iter()
                .zip(bounds.half_widths())
                .map(|(c, h)| Normal::new(c, std_scale * h).map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            for _ in 0..m {
                for (d, (lo, hi)) in normals.iter().zip(bounds.lo.iter().zip(&bounds.hi)) {
                    let v = loop {
                        let v = d.sample(&mut rng);
                        if *lo <= v && v <= *hi {
                            break v;
                        }
                    };
                    data.push(v);
                }
            }
        }
    }
    Ok(SampleSet {
        states: DenseMatrix::new(m, n, data)?,
        distribution: dist,
    })
}
