//! Neural Lyapunov differentiable predictive control.
//!
//! A neural policy and an input-convex Lyapunov candidate are trained
//! together by backpropagating predictive-control costs and soft constraint
//! penalties through batched plant rollouts. The closed loop is then
//! certified by sampling: the fraction of rollouts that respect every
//! constraint and decrease the Lyapunov function is turned into a
//! high-confidence lower bound on the true satisfaction probability.
//!
//! ```no_run
//! use nldpc::config::RunConfig;
//! use nldpc::trainer::train;
//!
//! let cfg = RunConfig::load("configs/di.cfg".as_ref())?;
//! let r = cfg.resolve()?;
//! let (policy, lyap) = cfg.build_networks(r.model.as_ref())?;
//! let out = train(r.model.as_ref(), &r.spec, policy, lyap, &cfg.training)?;
//! println!("final loss {}", out.history.last().unwrap().train_loss);
//! # Ok::<(), nldpc::Error>(())
//! ```

pub mod autodiff;
pub mod config;
pub mod dynamics;
mod error;
pub mod export;
pub mod neural;
pub mod objective;
pub mod rollout;
pub mod trainer;
pub mod verifier;

pub use error::{Error, Result};
