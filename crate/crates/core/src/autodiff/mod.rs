//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use matrix::DenseMatrix;
pub use tape::{logistic, smooth_relu, softplus, Gradients, NodeId, Op, Tape, TapeNode, NORM_GUARD};
