use serde::{Deserialize, Serialize};

use super::icnn::{IcnnNet, IcnnRecord};
use super::init::Initializer;
use super::Parametric;
use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_OUTER_WIDTH: f64 = 0.1;

/// Positive-definite Lyapunov candidate built on an ICNN:
///
/// ```text
/// V(x) = r(g(x) - g(0)) + eps * |x|^2
/// ```
///
/// `r` is the smooth rectifier (zero on the negative axis, quadratic on
/// `(0, d)`, linear beyond), so `V(0) = 0` and `V(x) >= eps |x|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovNet {
    g: IcnnNet,
    epsilon: f64,
    outer_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    pub epsilon: f64,
    pub outer_width: f64,
    #[serde(flatten)]
    pub icnn: IcnnRecord,
}

impl LyapunovNet {
    pub fn new(
        n_x: usize,
        hidden: &[usize],
        beta: f64,
        epsilon: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        let g = IcnnNet::new(n_x, hidden, beta, init)?;
        Self::from_parts(g, epsilon, DEFAULT_OUTER_WIDTH)
    }

    pub fn from_parts(g: IcnnNet, epsilon: f64, outer_width: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(outer_width > 0.0) {
            return Err(Error::invalid(format!(
                "Lyapunov epsilon and outer width must be positive (got {epsilon}, {outer_width})"
            )));
        }
        Ok(LyapunovNet {
            g,
            epsilon,
            outer_width,
        })
    }

    pub fn icnn(&self) -> &IcnnNet {
        &self.g
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_x(&self) -> usize {
        self.g.n_x()
    }

    /// `B x n_x` states in, `B x 1` values out.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let n_x = self.n_x();
        let gx = self.g.forward(tape, params, x)?;
        let origin = tape.constant(DenseMatrix::zeros(1, n_x))?;
        let g0 = self.g.forward(tape, params, origin)?;
        let neg_g0 = tape.scale(g0, -1.0)?;
        let shifted = tape.add_row(gx, neg_g0)?;
        let rect = tape.smooth_relu(shifted, self.outer_width)?;
        let eye = DenseMatrix::diag(&vec![self.epsilon; n_x]);
        let quad = tape.row_quad_form(x, &eye)?;
        tape.add(rect, quad)
    }

    /// `V(x)` for a single state.
    pub fn lyapunov_forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_rows(&DenseMatrix::row_vector(x))?[0])
    }

    pub fn to_record(&self) -> LyapunovRecord {
        LyapunovRecord {
            epsilon: self.epsilon,
            outer_width: self.outer_width,
            icnn: self.g.to_record(),
        }
    }

    pub fn from_record(rec: &LyapunovRecord) -> Result<Self> {
        let g = IcnnNet::from_record(&rec.icnn)?;
        Self::from_parts(g, rec.epsilon, rec.outer_width).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl Parametric for LyapunovNet {
    fn parameters(&self) -> Vec<&DenseMatrix> {
        self.g.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.g.parameters_mut()
    }
}

/// Anything that can score a batch of row states with a Lyapunov value.
pub trait LyapunovCandidate {
    fn eval_rows(&self, states: &DenseMatrix) -> Result<Vec<f64>>;
}

impl LyapunovCandidate for LyapunovNet {
    fn eval_rows(&self, states: &DenseMatrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape)?;
        let x = tape.constant(states.clone())?;
        let v = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(v).data().to_vec())
    }
}

/// `V(x) = xᵀ x`, the comparison baseline for learned certificates.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLyapunov;

impl LyapunovCandidate for QuadraticLyapunov {
    fn eval_rows(&self, states: &DenseMatrix) -> Result<Vec<f64>> {
        Ok((0..states.rows())
            .map(|i| states.row(i).iter().map(|v| v * v).sum())
            .collect())
    }
}
