//! Quadratic stage cost, relu-norm soft constraints and the batched
//! predictive-control loss.
//!
//! Every function here works on batches: states are `B x n_x` nodes, inputs
//! `B x n_u`, and per-sample terms come back as `B x 1` columns.

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::dynamics::{BoxSet, SystemModel};
use crate::error::{Error, Result};

/// Weight matrix given as a scalar multiple of I, a diagonal, or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weight {
    pub fn to_matrix(&self, n: usize) -> Result<DenseMatrix> {
        let m = match self {
            Weight::Scalar(s) => DenseMatrix::diag(&vec![*s; n]),
            Weight::Diagonal(d) => DenseMatrix::diag(d),
            Weight::Full(rows) => DenseMatrix::from_rows(rows).map_err(|e| Error::Config(e.to_string()))?,
        };
        if m.shape() != (n, n) {
            return Err(Error::Config(format!("weight must be {n}x{n}, got {:?}", m.shape())));
        }
        for i in 0..n {
            if m.get(i, i) < 0.0 {
                return Err(Error::Config("weight matrix has a negative diagonal entry".into()));
            }
            for j in 0..n {
                if m.get(i, j) != m.get(j, i) {
                    return Err(Error::Config("weight matrix must be symmetric".into()));
                }
            }
        }
        Ok(m)
    }
}

/// Objective weights, constraint sets and horizon of the control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub q_x: DenseMatrix,
    pub q_u: DenseMatrix,
    /// Lyapunov decrease penalty weight.
    pub q_v: f64,
    /// State constraint penalty weight.
    pub q_h: f64,
    /// Input constraint penalty weight.
    pub q_g: f64,
    /// Terminal set penalty weight.
    pub q_xf: f64,
    pub horizon: usize,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub terminal_box: Option<BoxSet>,
}

/// Config-file form of [`ProblemSpec`]; boxes other than the terminal set
/// come from the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    #[serde(rename = "Qx")]
    pub q_x: Weight,
    #[serde(rename = "Qu")]
    pub q_u: Weight,
    #[serde(rename = "QV")]
    pub q_v: f64,
    #[serde(rename = "Qh")]
    pub q_h: f64,
    #[serde(rename = "Qg")]
    pub q_g: f64,
    #[serde(rename = "QXf", default)]
    pub q_xf: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(default)]
    pub terminal_box: Option<BoxSet>,
    /// Strict-decrease margin applied at verification time.
    #[serde(default)]
    pub margin: f64,
}

impl ProblemConfig {
    pub fn resolve(&self, model: &dyn SystemModel) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            q_x: self.q_x.to_matrix(model.n_x())?,
            q_u: self.q_u.to_matrix(model.n_u())?,
            q_v: self.q_v,
            q_h: self.q_h,
            q_g: self.q_g,
            q_xf: self.q_xf,
            horizon: self.horizon,
            state_box: model.state_box().clone(),
            input_box: model.input_box().clone(),
            terminal_box: self.terminal_box.clone(),
        };
        spec.validate()?;
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(spec)
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("QV", self.q_v), ("Qh", self.q_h), ("Qg", self.q_g), ("QXf", self.q_xf)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("penalty weight {name} must be finite and >= 0, got {w}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon N must be at least 1".into()));
        }
        self.state_box.validate()?;
        self.input_box.validate()?;
        if let Some(t) = &self.terminal_box {
            t.validate()?;
            if t.dim() != self.state_box.dim() {
                return Err(Error::Config("terminal box dimension differs from the state box".into()));
            }
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.q_x.rows()
    }

    pub fn n_u(&self) -> usize {
        self.q_u.rows()
    }

    /// Stage cost `ℓ(x, u) = xᵀQx x + uᵀQu u` evaluated without a tape.
    pub fn stage_value(&self, x: &[f64], u: &[f64]) -> f64 {
        quad(&self.q_x, x) + quad(&self.q_u, u)
    }
}

fn quad(q: &DenseMatrix, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            s += v[i] * q.get(i, j) * v[j];
        }
    }
    s
}

/// `xᵀQx x + uᵀQu u` per row.
pub fn stage_loss(spec: &ProblemSpec, tape: &mut Tape, x: NodeId, u: NodeId) -> Result<NodeId> {
    let sx = tape.row_quad_form(x, &spec.q_x)?;
    let su = tape.row_quad_form(u, &spec.q_u)?;
    tape.add(sx, su)
}

/// `‖relu([v - hi; lo - v])‖₂` per row: zero exactly on the box.
pub fn box_penalty(tape: &mut Tape, v: NodeId, bounds: &BoxSet) -> Result<NodeId> {
    if tape.shape(v).1 != bounds.dim() {
        return Err(Error::Shape {
            op: "box_penalty",
            lhs: tape.shape(v),
            rhs: (1, bounds.dim()),
        });
    }
    let neg_hi = tape.constant(DenseMatrix::row_vector(&bounds.hi.iter().map(|h| -h).collect::<Vec<_>>()))?;
    let lo = tape.constant(DenseMatrix::row_vector(&bounds.lo))?;
    let over = tape.add_row(v, neg_hi)?;
    let neg_v = tape.scale(v, -1.0)?;
    let under = tape.add_row(neg_v, lo)?;
    let both = tape.concat_cols(over, under)?;
    let viol = tape.relu(both)?;
    tape.row_l2norm(viol)
}

pub fn penalty_state(spec: &ProblemSpec, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    box_penalty(tape, x, &spec.state_box)
}

pub fn penalty_input(spec: &ProblemSpec, tape: &mut Tape, u: NodeId) -> Result<NodeId> {
    box_penalty(tape, u, &spec.input_box)
}

/// `‖relu(V(x⁺) - V(x))‖₂` per row, from precomputed `B x 1` values.
pub fn penalty_lyapunov(tape: &mut Tape, v_next: NodeId, v_now: NodeId) -> Result<NodeId> {
    let diff = tape.sub(v_next, v_now)?;
    let r = tape.relu(diff)?;
    tape.row_l2norm(r)
}

/// Terminal-set penalty per row; a zero column when no terminal set exists.
pub fn penalty_terminal(spec: &ProblemSpec, tape: &mut Tape, x_n: NodeId) -> Result<NodeId> {
    match &spec.terminal_box {
        Some(b) => box_penalty(tape, x_n, b),
        None => tape.constant(DenseMatrix::zeros(tape.shape(x_n).0, 1)),
    }
}

/// Batched rollout pieces consumed by [`nldpc_loss`].
pub struct LossInputs<'a> {
    /// `N + 1` state nodes, each `B x n_x`.
    pub states: &'a [NodeId],
    /// `N` input nodes, each `B x n_u`.
    pub controls: &'a [NodeId],
    /// `N + 1` Lyapunov value nodes, each `B x 1`.
    pub values: &'a [NodeId],
}

/// Mean over batch and horizon of stage cost plus weighted penalties; the
/// terminal penalty is averaged over the batch only.
pub fn nldpc_loss(spec: &ProblemSpec, tape: &mut Tape, inputs: &LossInputs<'_>) -> Result<NodeId> {
    let n = inputs.controls.len();
    if n == 0 || inputs.states.len() != n + 1 || inputs.values.len() != n + 1 {
        return Err(Error::invalid(format!(
            "loss needs N >= 1 controls with N + 1 states and values (got {}, {}, {})",
            n,
            inputs.states.len(),
            inputs.values.len()
        )));
    }
    let m = tape.shape(inputs.states[0]).0;
    if m == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }

    let mut total: Option<NodeId> = None;
    for k in 0..n {
        let (x, u) = (inputs.states[k], inputs.controls[k]);
        let mut term = stage_loss(spec, tape, x, u)?;
        let pv = penalty_lyapunov(tape, inputs.values[k + 1], inputs.values[k])?;
        let px = penalty_state(spec, tape, x)?;
        let pu = penalty_input(spec, tape, u)?;
        for (p, w) in [(pv, spec.q_v), (px, spec.q_h), (pu, spec.q_g)] {
            let wp = tape.scale(p, w)?;
            term = tape.add(term, wp)?;
        }
        let s = tape.sum(term)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let running = tape.scale(total.expect("n >= 1"), 1.0 / (m * n) as f64)?;

    let pt = penalty_terminal(spec, tape, inputs.states[n])?;
    let pt_sum = tape.sum(pt)?;
    let terminal = tape.scale(pt_sum, spec.q_xf / m as f64)?;
    tape.add(running, terminal)
}
