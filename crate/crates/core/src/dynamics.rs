//! Discrete-time plant models `x⁺ = f(x, u)` that can be stepped on a tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Axis-aligned box `{ v | lo <= v <= hi }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = BoxSet { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Self {
        BoxSet {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::Config(format!(
                "box bounds must be nonempty and equally long (lo {}, hi {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config(format!("empty or non-finite box {:?}..{:?}", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && v.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// Per-coordinate violations `[v - hi, lo - v]`, unrectified.
    pub fn violations(&self, v: &[f64]) -> Vec<f64> {
        let upper = v.iter().zip(&self.hi).map(|(x, h)| x - h);
        let lower = v.iter().zip(&self.lo).map(|(x, l)| l - x);
        upper.chain(lower).collect()
    }
}

/// Contract for a plant usable inside a differentiable rollout.
pub trait SystemModel: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn state_box(&self) -> &BoxSet;
    fn input_box(&self) -> &BoxSet;

    /// Batched step on the tape: `B x n_x` states and `B x n_u` inputs in,
    /// `B x n_x` successor states out.
    fn step(&self, tape: &mut Tape, x: NodeId, u: NodeId) -> Result<NodeId>;

    /// Plain evaluation of [`SystemModel::step`]; bit-identical to it.
    fn step_values(&self, x: &DenseMatrix, u: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone())?;
        let ui = tape.constant(u.clone())?;
        let out = self.step(&mut tape, xi, ui)?;
        Ok(tape.value(out).clone())
    }
}

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DenseMatrix,
    b: DenseMatrix,
    a_t: DenseMatrix,
    b_t: DenseMatrix,
    state_box: BoxSet,
    input_box: BoxSet,
}

impl LtiSystem {
    pub fn new(a: DenseMatrix, b: DenseMatrix, state_box: BoxSet, input_box: BoxSet) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n || b.rows() != n || b.cols() == 0 || n == 0 {
            return Err(Error::Config(format!(
                "LTI matrices must be A: n x n, B: n x m (got A {:?}, B {:?})",
                a.shape(),
                b.shape()
            )));
        }
        state_box.validate()?;
        input_box.validate()?;
        if state_box.dim() != n || input_box.dim() != b.cols() {
            return Err(Error::Config(format!(
                "box dimensions ({}, {}) do not match n_x = {n}, n_u = {}",
                state_box.dim(),
                input_box.dim(),
                b.cols()
            )));
        }
        Ok(LtiSystem {
            a_t: a.transpose(),
            b_t: b.transpose(),
            a,
            b,
            state_box,
            input_box,
        })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }
}

impl SystemModel for LtiSystem {
    fn n_x(&self) -> usize {
        self.a.rows()
    }

    fn n_u(&self) -> usize {
        self.b.cols()
    }

    fn state_box(&self) -> &BoxSet {
        &self.state_box
    }

    fn input_box(&self) -> &BoxSet {
        &self.input_box
    }

    fn step(&self, tape: &mut Tape, x: NodeId, u: NodeId) -> Result<NodeId> {
        let (sx, su) = (tape.shape(x), tape.shape(u));
        if sx.1 != self.n_x() || su.1 != self.n_u() || sx.0 != su.0 {
            return Err(Error::Shape {
                op: "step",
                lhs: sx,
                rhs: su,
            });
        }
        let at = tape.constant(self.a_t.clone())?;
        let bt = tape.constant(self.b_t.clone())?;
        let ax = tape.matmul(x, at)?;
        let bu = tape.matmul(u, bt)?;
        tape.add(ax, bu)
    }
}

/// Unstable double integrator with `x ∈ [-10, 10]²`, `u ∈ [-1, 1]`.
pub fn double_integrator() -> LtiSystem {
    let a = DenseMatrix::from_rows(&[vec![1.2, 1.0], vec![0.0, 1.0]]).expect("static");
    let b = DenseMatrix::column(&[1.0, 0.5]);
    LtiSystem::new(a, b, BoxSet::symmetric(2, 10.0), BoxSet::symmetric(1, 1.0)).expect("static")
}

/// Physical parameters of the planar VTOL aircraft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PvtolParams {
    pub mass: f64,
    pub inertia: f64,
    pub arm: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for PvtolParams {
    fn default() -> Self {
        PvtolParams {
            mass: 4.0,
            inertia: 0.0475,
            arm: 0.25,
            gravity: 9.8,
            damping: 0.05,
            dt: 0.2,
        }
    }
}

/// PVTOL aircraft linearized about hover and discretized with forward Euler.
///
/// State `(x, y, θ, ẋ, ẏ, θ̇)`, inputs `(F1, F2)` as deviations from the
/// hover thrust, where `F1` acts laterally and `F2` along the body axis:
///
/// ```text
/// m ẍ = F1 - m g θ - c ẋ
/// m ÿ = F2 - c ẏ
/// J θ̈ = r F1
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PvtolModel {
    params: PvtolParams,
    lti: LtiSystem,
}

pub fn pvtol(params: PvtolParams) -> Result<PvtolModel> {
    pvtol_with_boxes(params, BoxSet::symmetric(6, 5.0), BoxSet::symmetric(2, 5.0))
}

pub fn pvtol_with_boxes(params: PvtolParams, state_box: BoxSet, input_box: BoxSet) -> Result<PvtolModel> {
    let p = params;
    for (name, v) in [("dt", p.dt), ("mass", p.mass), ("inertia", p.inertia)] {
        if !(v > 0.0) {
            return Err(Error::Config(format!("PVTOL {name} must be positive, got {v}")));
        }
    }
    if !(p.arm >= 0.0) || !(p.gravity >= 0.0) || !(p.damping >= 0.0) {
        return Err(Error::Config("PVTOL arm, gravity and damping must be nonnegative".into()));
    }
    let mut ac = DenseMatrix::zeros(6, 6);
    ac.set(0, 3, 1.0);
    ac.set(1, 4, 1.0);
    ac.set(2, 5, 1.0);
    ac.set(3, 2, -p.gravity);
    ac.set(3, 3, -p.damping / p.mass);
    ac.set(4, 4, -p.damping / p.mass);
    let mut bc = DenseMatrix::zeros(6, 2);
    bc.set(3, 0, 1.0 / p.mass);
    bc.set(4, 1, 1.0 / p.mass);
    bc.set(5, 0, p.arm / p.inertia);

    let a = DenseMatrix::identity(6).zip_map(&ac, |i, c| i + p.dt * c);
    let b = bc.map(|v| p.dt * v);
    Ok(PvtolModel {
        params,
        lti: LtiSystem::new(a, b, state_box, input_box)?,
    })
}

impl PvtolModel {
    pub fn params(&self) -> &PvtolParams {
        &self.params
    }

    pub fn linear(&self) -> &LtiSystem {
        &self.lti
    }
}

impl SystemModel for PvtolModel {
    fn n_x(&self) -> usize {
        6
    }

    fn n_u(&self) -> usize {
        2
    }

    fn state_box(&self) -> &BoxSet {
        self.lti.state_box()
    }

    fn input_box(&self) -> &BoxSet {
        self.lti.input_box()
    }

    fn step(&self, tape: &mut Tape, x: NodeId, u: NodeId) -> Result<NodeId> {
        self.lti.step(tape, x, u)
    }
}

/// Simulates `x_{k+1} = f(x_k, u_k)` for each row of `controls`; the
/// returned `(N + 1) x n_x` trajectory starts with `x0`.
pub fn rollout_open_loop(model: &dyn SystemModel, x0: &[f64], controls: &DenseMatrix) -> Result<DenseMatrix> {
    if x0.len() != model.n_x() {
        return Err(Error::Shape {
            op: "rollout_open_loop",
            lhs: (1, x0.len()),
            rhs: (1, model.n_x()),
        });
    }
    if controls.rows() > 0 && controls.cols() != model.n_u() {
        return Err(Error::Shape {
            op: "rollout_open_loop",
            lhs: controls.shape(),
            rhs: (controls.rows(), model.n_u()),
        });
    }
    let mut rows = vec![x0.to_vec()];
    let mut x = DenseMatrix::row_vector(x0);
    for k in 0..controls.rows() {
        x = model.step_values(&x, &DenseMatrix::row_vector(controls.row(k)))?;
        rows.push(x.data().to_vec());
    }
    DenseMatrix::from_rows(&rows)
}

/// Serializable plant description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Lti {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        #[serde(default = "unit_dt")]
        dt: f64,
        state_box: BoxSet,
        input_box: BoxSet,
    },
    Pvtol {
        #[serde(flatten)]
        params: PvtolParams,
        state_box: BoxSet,
        input_box: BoxSet,
    },
}

fn unit_dt() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn double_integrator() -> Self {
        ModelSpec::Lti {
            a: vec![vec![1.2, 1.0], vec![0.0, 1.0]],
            b: vec![vec![1.0], vec![0.5]],
            dt: 1.0,
            state_box: BoxSet::symmetric(2, 10.0),
            input_box: BoxSet::symmetric(1, 1.0),
        }
    }

    pub fn pvtol() -> Self {
        ModelSpec::Pvtol {
            params: PvtolParams::default(),
            state_box: BoxSet::symmetric(6, 5.0),
            input_box: BoxSet::symmetric(2, 5.0),
        }
    }

    pub fn build(&self) -> Result<Box<dyn SystemModel>> {
        match self {
            ModelSpec::Lti {
                a,
                b,
                state_box,
                input_box,
                ..
            } => {
                let a = DenseMatrix::from_rows(a).map_err(|e| Error::Config(format!("A: {e}")))?;
                let b = DenseMatrix::from_rows(b).map_err(|e| Error::Config(format!("B: {e}")))?;
                Ok(Box::new(LtiSystem::new(a, b, state_box.clone(), input_box.clone())?))
            }
            ModelSpec::Pvtol {
                params,
                state_box,
                input_box,
            } => Ok(Box::new(pvtol_with_boxes(*params, state_box.clone(), input_box.clone())?)),
        }
    }
}
