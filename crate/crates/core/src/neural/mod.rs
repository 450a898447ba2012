//! Neural policy and Lyapunov candidate networks.

mod icnn;
mod init;
mod lyapunov;
mod policy;

pub use icnn::{IcnnNet, IcnnRecord, POSITIVE_REPARAM_BETA};
pub use init::{InitScheme, Initializer};
pub use lyapunov::{
    LyapunovCandidate, LyapunovNet, LyapunovRecord, QuadraticLyapunov, DEFAULT_EPSILON,
    DEFAULT_OUTER_WIDTH,
};
pub use policy::{Activation, PolicyNet, PolicyRecord, SMOOTH_BETA};

use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::error::Result;

/// A container of learnable matrices with a fixed, canonical order.
pub trait Parametric {
    fn parameters(&self) -> Vec<&DenseMatrix>;
    fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Registers every parameter as a trainable leaf, in canonical order.
    fn bind(&self, tape: &mut Tape) -> Result<Vec<NodeId>> {
        self.parameters()
            .into_iter()
            .map(|p| tape.param(p.clone()))
            .collect()
    }

    /// Same as [`Parametric::bind`] but as constants (no gradients).
    fn bind_frozen(&self, tape: &mut Tape) -> Result<Vec<NodeId>> {
        self.parameters()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect()
    }

    /// Overwrites the parameters from a flat list in canonical order.
    fn load_parameters(&mut self, values: &[DenseMatrix]) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != values.len() {
            return Err(crate::error::Error::invalid(format!(
                "expected {} parameter blocks, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(crate::error::Error::Shape {
                    op: "load_parameters",
                    lhs: slot.shape(),
                    rhs: v.shape(),
                });
            }
            **slot = v.clone();
        }
        Ok(())
    }
}
