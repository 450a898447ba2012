//! Define-by-run reverse-mode tape.
//!
//! Every operation evaluates eagerly and appends a node; node ids are
//! tape indices, so parents always precede children and a reverse sweep
//! over the node list is a valid topological order.

use std::collections::BTreeMap;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Below this norm `l2norm` reports a zero gradient.
pub const NORM_GUARD: f64 = 1e-12;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `a + row` with a `1 x cols` row broadcast over every row of `a`.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softplus(NodeId, f64),
    /// Piecewise quadratic-linear rectifier with transition width `d`.
    SmoothRelu(NodeId, f64),
    WeightedSqNorm(NodeId, DenseMatrix),
    RowQuadForm(NodeId, DenseMatrix),
    L2Norm(NodeId),
    RowL2Norm(NodeId),
    Sum(NodeId),
    Mean(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatCols(NodeId, NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::SmoothRelu(..) => "smooth_relu",
            Op::WeightedSqNorm(..) => "weighted_sqnorm",
            Op::RowQuadForm(..) => "row_quad_form",
            Op::L2Norm(..) => "l2norm",
            Op::RowL2Norm(..) => "row_l2norm",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Softplus(a, _)
            | Op::SmoothRelu(a, _)
            | Op::WeightedSqNorm(a, _)
            | Op::RowQuadForm(a, _)
            | Op::L2Norm(a)
            | Op::RowL2Norm(a)
            | Op::Sum(a)
            | Op::SliceCols(a, _) => vec![*a],
            Op::Mean(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TapeNode {
    pub id: NodeId,
    pub op: Op,
    pub value: DenseMatrix,
}

/// Gradients of a scalar loss with respect to the registered parameters.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<NodeId, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &DenseMatrix)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    params: Vec<NodeId>,
    // Rolling hash over every non-smooth branch taken in the forward pass.
    kinks: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / beta
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn smooth_relu(y: f64, d: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y < d {
        y * y / (2.0 * d)
    } else {
        y - 0.5 * d
    }
}

fn smooth_relu_grad(y: f64, d: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y < d {
        y / d
    } else {
        1.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            kinks: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TapeNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    /// Fingerprint of the activation pattern of every kinked op evaluated so
    /// far. Two forward passes with equal fingerprints took the same smooth
    /// branch everywhere.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn mix(&mut self, bits: impl Iterator<Item = u8>) {
        for b in bits {
            self.kinks ^= u64::from(b);
            self.kinks = self.kinks.wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: id.0,
                op: op.name(),
            });
        }
        self.nodes.push(TapeNode { id, op, value });
        Ok(id)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: DenseMatrix) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    /// Trainable leaf; its gradient is returned by [`Tape::backward`].
    pub fn param(&mut self, value: DenseMatrix) -> Result<NodeId> {
        let id = self.push(Op::Leaf, value)?;
        self.params.push(id);
        Ok(id)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..sa.0 {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), value)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(0.0));
        let bits: Vec<u8> = self.value(a).data().iter().map(|&x| u8::from(x > 0.0)).collect();
        self.mix(bits.into_iter());
        self.push(Op::Relu(a), value)
    }

    /// `(1/beta) ln(1 + exp(beta x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: NodeId, beta: f64) -> Result<NodeId> {
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("softplus beta must be > 0, got {beta}")));
        }
        let value = self.value(a).map(|x| softplus(x, beta));
        self.push(Op::Softplus(a, beta), value)
    }

    /// Zero for `y <= 0`, `y^2 / 2d` on `(0, d)`, `y - d/2` beyond.
    pub fn smooth_relu(&mut self, a: NodeId, d: f64) -> Result<NodeId> {
        if !(d > 0.0) {
            return Err(Error::invalid(format!("smooth_relu width must be > 0, got {d}")));
        }
        let value = self.value(a).map(|y| smooth_relu(y, d));
        let bits: Vec<u8> = self
            .value(a)
            .data()
            .iter()
            .map(|&y| u8::from(y > 0.0) + u8::from(y >= d))
            .collect();
        self.mix(bits.into_iter());
        self.push(Op::SmoothRelu(a, d), value)
    }

    /// `aᵀ Q a` for a column vector `a`.
    pub fn weighted_sqnorm(&mut self, a: NodeId, q: &DenseMatrix) -> Result<NodeId> {
        let sa = self.shape(a);
        if sa.1 != 1 || q.rows() != sa.0 || q.cols() != sa.0 {
            return Err(Error::Shape {
                op: "weighted_sqnorm",
                lhs: sa,
                rhs: q.shape(),
            });
        }
        let x = self.value(a);
        let qx = q.matmul(x)?;
        let v: f64 = x.data().iter().zip(qx.data()).map(|(a, b)| a * b).sum();
        self.push(Op::WeightedSqNorm(a, q.clone()), DenseMatrix::scalar(v))
    }

    /// Per-row quadratic form: row `i` of the `B x 1` output is `x_i Q x_iᵀ`.
    pub fn row_quad_form(&mut self, a: NodeId, q: &DenseMatrix) -> Result<NodeId> {
        let sa = self.shape(a);
        if q.rows() != sa.1 || q.cols() != sa.1 {
            return Err(Error::Shape {
                op: "row_quad_form",
                lhs: sa,
                rhs: q.shape(),
            });
        }
        let x = self.value(a);
        let xq = x.matmul(q)?;
        let out: Vec<f64> = (0..sa.0)
            .map(|i| x.row(i).iter().zip(xq.row(i)).map(|(a, b)| a * b).sum())
            .collect();
        let value = DenseMatrix::new(sa.0, 1, out)?;
        self.push(Op::RowQuadForm(a, q.clone()), value)
    }

    /// Euclidean (Frobenius) norm; gradient is zero below [`NORM_GUARD`].
    pub fn l2norm(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.mix(std::iter::once(u8::from(n >= NORM_GUARD)));
        self.push(Op::L2Norm(a), DenseMatrix::scalar(n))
    }

    /// Euclidean norm of each row, as a `B x 1` column.
    pub fn row_l2norm(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let out: Vec<f64> = (0..x.rows())
            .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let bits: Vec<u8> = out.iter().map(|&n| u8::from(n >= NORM_GUARD)).collect();
        self.mix(bits.into_iter());
        let value = DenseMatrix::new(out.len(), 1, out)?;
        self.push(Op::RowL2Norm(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), DenseMatrix::scalar(s))
    }

    /// Arithmetic mean of `1 x 1` nodes.
    pub fn mean(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::invalid("mean of an empty node list"));
        }
        let mut s = 0.0;
        for &id in ids {
            let shape = self.shape(id);
            if shape != (1, 1) {
                return Err(Error::Shape {
                    op: "mean",
                    lhs: shape,
                    rhs: (1, 1),
                });
            }
            s += self.value(id).item();
        }
        let value = DenseMatrix::scalar(s / ids.len() as f64);
        self.push(Op::Mean(ids.to_vec()), value)
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: x.shape(),
                rhs: (start, len),
            });
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for i in 0..x.rows() {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let value = DenseMatrix::new(x.rows(), len, data)?;
        self.push(Op::SliceCols(a, start), value)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(sa.0 * (sa.1 + sb.1));
        for i in 0..sa.0 {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(y.row(i));
        }
        let value = DenseMatrix::new(sa.0, sa.1 + sb.1, data)?;
        self.push(Op::ConcatCols(a, b), value)
    }

    /// Reverse sweep from a scalar node. Returns the gradient of every
    /// registered parameter, including zero gradients for parameters the
    /// loss does not depend on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: self.nodes[idx].op.name(),
                });
            }
            for (parent, contrib) in self.local_grads(idx, &g)? {
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Leaves keep their adjoint for collection below.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                adj[idx] = Some(g);
            }
        }

        let mut map = BTreeMap::new();
        for &p in &self.params {
            let (r, c) = self.shape(p);
            let g = adj
                .get(p.0)
                .and_then(|a| a.clone())
                .unwrap_or_else(|| DenseMatrix::zeros(r, c));
            map.insert(p, g);
        }
        Ok(Gradients { map })
    }

    fn local_grads(&self, idx: usize, g: &DenseMatrix) -> Result<Vec<(NodeId, DenseMatrix)>> {
        let node = &self.nodes[idx];
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.matmul(&vb.transpose())?;
                let gb = va.transpose().matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::AddRow(a, row) => {
                let mut gr = DenseMatrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (acc, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                vec![(*a, g.clone()), (*row, gr)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| c * v))],
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                vec![(*a, ga)]
            }
            Op::Softplus(a, beta) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * logistic(beta * x));
                vec![(*a, ga)]
            }
            Op::SmoothRelu(a, d) => {
                let ga = g.zip_map(self.value(*a), |gv, y| gv * smooth_relu_grad(y, *d));
                vec![(*a, ga)]
            }
            Op::WeightedSqNorm(a, q) => {
                let x = self.value(*a);
                let sym = q.zip_map(&q.transpose(), |u, v| u + v);
                let ga = sym.matmul(x)?.map(|v| g.item() * v);
                vec![(*a, ga)]
            }
            Op::RowQuadForm(a, q) => {
                let x = self.value(*a);
                let sym = q.zip_map(&q.transpose(), |u, v| u + v);
                let mut ga = x.matmul(&sym)?;
                for i in 0..ga.rows() {
                    let s = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= s);
                }
                vec![(*a, ga)]
            }
            Op::L2Norm(a) => {
                let n = node.value.item();
                let ga = if n < NORM_GUARD {
                    DenseMatrix::zeros(self.shape(*a).0, self.shape(*a).1)
                } else {
                    let s = g.item() / n;
                    self.value(*a).map(|v| s * v)
                };
                vec![(*a, ga)]
            }
            Op::RowL2Norm(a) => {
                let mut ga = self.value(*a).clone();
                for i in 0..ga.rows() {
                    let n = node.value.get(i, 0);
                    let s = if n < NORM_GUARD { 0.0 } else { g.get(i, 0) / n };
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= s);
                }
                vec![(*a, ga)]
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, DenseMatrix::filled(r, c, g.item()))]
            }
            Op::Mean(ids) => {
                let s = g.item() / ids.len() as f64;
                ids.iter().map(|id| (*id, DenseMatrix::scalar(s))).collect()
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = DenseMatrix::zeros(r, c);
                let len = g.cols();
                for i in 0..r {
                    ga.row_mut(i)[*start..*start + len].copy_from_slice(g.row(i));
                }
                vec![(*a, ga)]
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let mut ga = Vec::new();
                let mut gb = Vec::new();
                for i in 0..g.rows() {
                    ga.extend_from_slice(&g.row(i)[..ca]);
                    gb.extend_from_slice(&g.row(i)[ca..]);
                }
                let (r, cb) = self.shape(*b);
                vec![
                    (*a, DenseMatrix::new(r, ca, ga)?),
                    (*b, DenseMatrix::new(r, cb, gb)?),
                ]
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DenseMatrix {
        DenseMatrix::column(v)
    }

    #[test]
    fn add_zero_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(col(&[1.5, -2.0])).unwrap();
        let z = t.constant(col(&[0.0, 0.0])).unwrap();
        let y = t.add(x, z).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn sub_negates_second_adjoint() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::scalar(3.0)).unwrap();
        let b = t.param(DenseMatrix::scalar(1.0)).unwrap();
        let d = t.sub(a, b).unwrap();
        assert_eq!(t.value(d).item(), 2.0);
        let g = t.backward(d).unwrap();
        assert_eq!(g.get(a).unwrap().item(), 1.0);
        assert_eq!(g.get(b).unwrap().item(), -1.0);
    }

    #[test]
    fn scale_multiplies() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::scalar(2.0)).unwrap();
        let s = t.scale(a, 5.0).unwrap();
        assert_eq!(t.value(s).item(), 10.0);
        assert_eq!(t.backward(s).unwrap().get(a).unwrap().item(), 5.0);
    }

    #[test]
    fn add_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(col(&[1.0])).unwrap();
        let b = t.constant(col(&[1.0, 2.0])).unwrap();
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.sub(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_values_and_gates() {
        let mut t = Tape::new();
        let x = t.param(col(&[-1.0, 0.0, 2.0])).unwrap();
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let seeded = t.scale(r, 3.0).unwrap();
        let s = t.sum(seeded).unwrap();
        let g = t.backward(s).unwrap();
        // gate is 0 at -1 and at exactly 0; seed 3 passes at 2
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn softplus_values() {
        let mut t = Tape::new();
        let x = t.constant(col(&[0.0, 100.0, -100.0])).unwrap();
        let y = t.softplus(x, 5.0).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 2f64.ln() / 5.0).abs() < 1e-15);
        assert!((v[0] - 0.138629).abs() < 1e-6);
        assert!((v[1] - 100.0).abs() < 1e-12);
        assert!(v[2] >= 0.0 && v[2] < 1e-200);
    }

    #[test]
    fn softplus_rejects_nonpositive_beta() {
        let mut t = Tape::new();
        let x = t.constant(col(&[0.0])).unwrap();
        assert!(t.softplus(x, 0.0).is_err());
    }

    #[test]
    fn weighted_sqnorm_cases() {
        let mut t = Tape::new();
        let a = t.param(col(&[1.0, 1.0])).unwrap();
        let q = DenseMatrix::diag(&[5.0, 5.0]);
        let v = t.weighted_sqnorm(a, &q).unwrap();
        assert_eq!(t.value(v).item(), 10.0);

        let mut t = Tape::new();
        let a = t.param(col(&[1.0, 0.0])).unwrap();
        let v = t.weighted_sqnorm(a, &DenseMatrix::identity(2)).unwrap();
        let g = t.backward(v).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 0.0]);

        let mut t = Tape::new();
        let a = t.constant(col(&[0.0, 0.0])).unwrap();
        let v = t.weighted_sqnorm(a, &q).unwrap();
        assert_eq!(t.value(v).item(), 0.0);
        let bad = t.constant(col(&[0.0])).unwrap();
        assert!(t.weighted_sqnorm(bad, &q).is_err());
    }

    #[test]
    fn l2norm_and_guard() {
        let mut t = Tape::new();
        let a = t.param(col(&[3.0, 4.0])).unwrap();
        let n = t.l2norm(a).unwrap();
        assert_eq!(t.value(n).item(), 5.0);

        let mut t = Tape::new();
        let z = t.param(col(&[0.0, 0.0])).unwrap();
        let n = t.l2norm(z).unwrap();
        assert_eq!(t.value(n).item(), 0.0);
        let g = t.backward(n).unwrap();
        assert!(g.get(z).unwrap().is_finite());
        assert_eq!(g.get(z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mean_of_scalars() {
        let mut t = Tape::new();
        let ids: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| t.constant(DenseMatrix::scalar(v)).unwrap())
            .collect();
        let m = t.mean(&ids).unwrap();
        assert_eq!(t.value(m).item(), 2.0);
        assert!(t.mean(&[]).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(col(&[3.0])).unwrap();
        let l = t.weighted_sqnorm(x, &DenseMatrix::identity(1)).unwrap();
        assert_eq!(t.backward(l).unwrap().get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn matmul_gradient_sum() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::row_vector(&[1.0, 2.0])).unwrap();
        let b = t.constant(col(&[3.0, 4.0])).unwrap();
        let p = t.matmul(a, b).unwrap();
        let s = t.sum(p).unwrap();
        assert_eq!(t.backward(s).unwrap().get(a).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let a = t.param(col(&[1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(DenseMatrix::scalar(1e308)).unwrap();
        match t.scale(a, 10.0) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "scale");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(col(&[1.0, 2.0])).unwrap();
        let b = t.param(DenseMatrix::scalar(2.0)).unwrap();
        let l = t.scale(b, 2.0).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.len(), 2);
    }
}
