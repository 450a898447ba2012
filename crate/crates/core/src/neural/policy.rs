use serde::{Deserialize, Serialize};

use super::init::{InitScheme, Initializer};
use super::Parametric;
use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Softplus sharpness used wherever a smooth rectifier replaces relu.
pub const SMOOTH_BETA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Softplus => tape.softplus(x, SMOOTH_BETA),
        }
    }
}

/// Feed-forward policy mapping a state to a whole predicted control
/// sequence of `horizon` steps, `n_u` inputs each.
///
/// Weights are stored `fan_in x fan_out` so a batch of row states `X`
/// maps to `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    widths: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<DenseMatrix>,
    activation: Activation,
    horizon: usize,
    n_u: usize,
}

/// Serialized form of [`PolicyNet`]; weights flattened row-major per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub n_u: usize,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl PolicyNet {
    pub fn new(
        n_x: usize,
        hidden: &[usize],
        horizon: usize,
        n_u: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        if horizon == 0 || n_u == 0 {
            return Err(Error::invalid("policy horizon and input width must be at least 1"));
        }
        let mut widths = vec![n_x];
        widths.extend_from_slice(hidden);
        widths.push(horizon * n_u);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            weights.push(init.weight(w[0], w[1])?);
            biases.push(init.bias(w[1])?);
        }
        Ok(PolicyNet {
            widths,
            weights,
            biases,
            activation,
            horizon,
            n_u,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(n_x: usize, hidden: &[usize], horizon: usize, n_u: usize) -> Result<Self> {
        let mut init = Initializer::new(0, InitScheme::Zeros);
        Self::new(n_x, hidden, horizon, n_u, Activation::Relu, &mut init)
    }

    pub fn n_x(&self) -> usize {
        self.widths[0]
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Batched forward pass on bound parameters: `B x n_x` in,
    /// `B x (horizon * n_u)` out, where columns `k*n_u..(k+1)*n_u` hold `u_k`.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.shape(x);
        if cols != self.n_x() {
            return Err(Error::Shape {
                op: "policy_forward",
                lhs: tape.shape(x),
                rhs: (1, self.n_x()),
            });
        }
        let last = self.weights.len() - 1;
        let mut z = x;
        for l in 0..=last {
            let zw = tape.matmul(z, params[2 * l])?;
            z = tape.add_row(zw, params[2 * l + 1])?;
            if l < last {
                z = self.activation.apply(tape, z)?;
            }
        }
        Ok(z)
    }

    /// Control sequence for one initial state; row `k` is `u_k`.
    pub fn policy_forward(&self, x0: &[f64]) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape)?;
        let x = tape.constant(DenseMatrix::row_vector(x0))?;
        let out = self.forward(&mut tape, &params, x)?;
        DenseMatrix::new(self.horizon, self.n_u, tape.value(out).data().to_vec())
    }

    /// Receding-horizon action: the first row of [`Self::policy_forward`].
    pub fn first_action(&self, x: &[f64]) -> Result<Vec<f64>> {
        let seq = self.policy_forward(x)?;
        Ok(seq.row(0).to_vec())
    }

    pub fn to_record(&self) -> PolicyRecord {
        PolicyRecord {
            widths: self.widths.clone(),
            activation: self.activation,
            horizon: self.horizon,
            n_u: self.n_u,
            weights: self.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: self.biases.iter().map(|b| b.data().to_vec()).collect(),
        }
    }

    pub fn from_record(rec: &PolicyRecord) -> Result<Self> {
        if rec.widths.len() < 2 || rec.widths.contains(&0) {
            return Err(Error::Parse("policy widths must list at least two nonzero layers".into()));
        }
        if rec.horizon == 0 || rec.n_u == 0 || *rec.widths.last().unwrap() != rec.horizon * rec.n_u {
            return Err(Error::Parse(format!(
                "policy output width {} does not equal N*n_u = {}*{}",
                rec.widths.last().unwrap(),
                rec.horizon,
                rec.n_u
            )));
        }
        let layers = rec.widths.len() - 1;
        if rec.weights.len() != layers || rec.biases.len() != layers {
            return Err(Error::Parse("policy layer count does not match widths".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in rec.widths.windows(2).enumerate() {
            weights.push(
                DenseMatrix::new(w[0], w[1], rec.weights[l].clone())
                    .map_err(|e| Error::Parse(format!("policy weight {l}: {e}")))?,
            );
            biases.push(
                DenseMatrix::new(1, w[1], rec.biases[l].clone())
                    .map_err(|e| Error::Parse(format!("policy bias {l}: {e}")))?,
            );
        }
        Ok(PolicyNet {
            widths: rec.widths.clone(),
            weights,
            biases,
            activation: rec.activation,
            horizon: rec.horizon,
            n_u: rec.n_u,
        })
    }
}

impl Parametric for PolicyNet {
    fn parameters(&self) -> Vec<&DenseMatrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}
