use serde::{Deserialize, Serialize};

use super::init::Initializer;
use super::Parametric;
use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Sharpness of the softplus that maps raw hidden-to-hidden weights to
/// nonnegative ones.
pub const POSITIVE_REPARAM_BETA: f64 = 1.0;

/// Input-convex network with a scalar head.
///
/// ```text
/// z1     = s(W0 x + b0)
/// z{i+1} = s(U_i z_i + W_i x + b_i)
/// ```
///
/// `s` is softplus (convex, nondecreasing) and `U_i = softplus(raw_i) / fan_in`
/// is elementwise positive, which makes the output convex in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnNet {
    n_x: usize,
    widths: Vec<usize>,
    beta: f64,
    // input_weights[i]: n_x x widths[i]
    input_weights: Vec<DenseMatrix>,
    biases: Vec<DenseMatrix>,
    // raw_hidden[i]: widths[i] x widths[i + 1], unconstrained
    raw_hidden: Vec<DenseMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcnnRecord {
    pub n_x: usize,
    pub widths: Vec<usize>,
    pub beta: f64,
    #[serde(rename = "W")]
    pub input_weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub biases: Vec<Vec<f64>>,
    #[serde(rename = "U_raw")]
    pub raw_hidden: Vec<Vec<f64>>,
}

impl IcnnNet {
    /// `hidden` lists the hidden widths; a width-1 output layer is appended.
    pub fn new(n_x: usize, hidden: &[usize], beta: f64, init: &mut Initializer) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::invalid("ICNN input width must be at least 1"));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("ICNN softplus beta must be > 0, got {beta}")));
        }
        let mut widths = hidden.to_vec();
        widths.push(1);
        let mut input_weights = Vec::new();
        let mut biases = Vec::new();
        let mut raw_hidden = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            input_weights.push(init.weight(n_x, w)?);
            biases.push(init.bias(w)?);
            if i + 1 < widths.len() {
                raw_hidden.push(init.weight(w, widths[i + 1])?);
            }
        }
        Ok(IcnnNet {
            n_x,
            widths,
            beta,
            input_weights,
            biases,
            raw_hidden,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Layer output widths, ending with the scalar head.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Nonnegative hidden-to-hidden weights as used by the forward pass.
    pub fn effective_hidden(&self) -> Vec<DenseMatrix> {
        self.raw_hidden
            .iter()
            .map(|raw| {
                let fan_in = raw.rows() as f64;
                raw.map(|v| crate::autodiff::softplus(v, POSITIVE_REPARAM_BETA) / fan_in)
            })
            .collect()
    }

    // Parameter order: for each layer W_i, b_i, then U_raw_i (if any).
    fn layer_ids(&self, params: &[NodeId], i: usize) -> (NodeId, NodeId, Option<NodeId>) {
        let base = 3 * i;
        let u = (i + 1 < self.widths.len()).then(|| params[base + 2]);
        (params[base], params[base + 1], u)
    }

    /// `B x n_x` in, `B x 1` out.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        if tape.shape(x).1 != self.n_x {
            return Err(Error::Shape {
                op: "icnn_forward",
                lhs: tape.shape(x),
                rhs: (1, self.n_x),
            });
        }
        let mut z: Option<NodeId> = None;
        let mut pending_u: Option<NodeId> = None;
        for i in 0..self.widths.len() {
            let (w, b, u_raw) = self.layer_ids(params, i);
            let mut pre = tape.matmul(x, w)?;
            if let (Some(zi), Some(u)) = (z, pending_u) {
                let uz = tape.matmul(zi, u)?;
                pre = tape.add(pre, uz)?;
            }
            pre = tape.add_row(pre, b)?;
            z = Some(tape.softplus(pre, self.beta)?);
            pending_u = match u_raw {
                Some(raw) => {
                    let fan_in = tape.shape(raw).0 as f64;
                    let pos = tape.softplus(raw, POSITIVE_REPARAM_BETA)?;
                    Some(tape.scale(pos, 1.0 / fan_in)?)
                }
                None => None,
            };
        }
        Ok(z.expect("at least one layer"))
    }

    /// `g(x)` for a single state.
    pub fn icnn_forward(&self, x: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape)?;
        let xi = tape.constant(DenseMatrix::row_vector(x))?;
        let out = self.forward(&mut tape, &params, xi)?;
        Ok(tape.value(out).item())
    }

    pub fn to_record(&self) -> IcnnRecord {
        IcnnRecord {
            n_x: self.n_x,
            widths: self.widths.clone(),
            beta: self.beta,
            input_weights: self.input_weights.iter().map(|m| m.data().to_vec()).collect(),
            biases: self.biases.iter().map(|m| m.data().to_vec()).collect(),
            raw_hidden: self.raw_hidden.iter().map(|m| m.data().to_vec()).collect(),
        }
    }

    pub fn from_record(rec: &IcnnRecord) -> Result<Self> {
        let k = rec.widths.len();
        if rec.n_x == 0 || k == 0 || rec.widths.contains(&0) || rec.widths[k - 1] != 1 {
            return Err(Error::Parse("ICNN widths must be nonzero and end with 1".into()));
        }
        if !(rec.beta > 0.0) {
            return Err(Error::Parse("ICNN beta must be positive".into()));
        }
        if rec.input_weights.len() != k || rec.biases.len() != k || rec.raw_hidden.len() + 1 != k {
            return Err(Error::Parse("ICNN layer count does not match widths".into()));
        }
        let wrap = |what: &str, i: usize, r, c, d: &Vec<f64>| {
            DenseMatrix::new(r, c, d.clone()).map_err(|e| Error::Parse(format!("ICNN {what} {i}: {e}")))
        };
        let mut input_weights = Vec::new();
        let mut biases = Vec::new();
        let mut raw_hidden = Vec::new();
        for i in 0..k {
            input_weights.push(wrap("W", i, rec.n_x, rec.widths[i], &rec.input_weights[i])?);
            biases.push(wrap("b", i, 1, rec.widths[i], &rec.biases[i])?);
            if i + 1 < k {
                raw_hidden.push(wrap("U_raw", i, rec.widths[i], rec.widths[i + 1], &rec.raw_hidden[i])?);
            }
        }
        Ok(IcnnNet {
            n_x: rec.n_x,
            widths: rec.widths.clone(),
            beta: rec.beta,
            input_weights,
            biases,
            raw_hidden,
        })
    }
}

impl Parametric for IcnnNet {
    fn parameters(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::new();
        for i in 0..self.widths.len() {
            out.push(&self.input_weights[i]);
            out.push(&self.biases[i]);
            if let Some(u) = self.raw_hidden.get(i) {
                out.push(u);
            }
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::new();
        let mut hidden = self.raw_hidden.iter_mut();
        for (w, b) in self.input_weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
            if let Some(u) = hidden.next() {
                out.push(u);
            }
        }
        out
    }
}
