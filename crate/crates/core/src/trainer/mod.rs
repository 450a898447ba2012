//! Sampled training loop: draw initial conditions, build the rollout loss,
//! backpropagate and take AdamW steps on policy and Lyapunov parameters.

mod adamw;
mod checkpoint;
mod sampling;

pub use adamw::{AdamWConfig, AdamWState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Snapshot, TrainingMeta, FORMAT_VERSION};
pub use sampling::{sample_initial_conditions, Distribution, SampleSet};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::neural::{LyapunovNet, Parametric, PolicyNet};
use crate::objective::ProblemSpec;
use crate::rollout::build_train_graph;

const SHUFFLE_STREAM: u64 = 0x5eed_5b1f_f1e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub train_samples: usize,
    #[serde(default)]
    pub val_samples: usize,
    #[serde(default)]
    pub test_samples: usize,
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    333
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.train_samples {
            return Err(Error::Config(format!(
                "batch size must be in 1..={}, got {}",
                self.train_samples, self.batch_size
            )));
        }
        self.optimizer.validate()
    }

    /// Train, validation and test sets drawn from one seeded stream and
    /// split in that order.
    pub fn datasets(&self, model: &dyn SystemModel) -> Result<[SampleSet; 3]> {
        let sizes = [self.train_samples, self.val_samples, self.test_samples];
        let all = sample_initial_conditions(self.distribution, sizes.iter().sum(), model.state_box(), self.seed)?;
        let parts = all.split(&sizes)?;
        let [a, b, c]: [SampleSet; 3] = parts.try_into().expect("three parts");
        Ok([a, b, c])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// `None` without a validation set.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNet,
    pub lyapunov: LyapunovNet,
    pub history: Vec<EpochRecord>,
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Option<(usize, PolicyNet, LyapunovNet)>,
    pub test_set: SampleSet,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.history)
    }
}

pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.epoch, fmt_f64(r.train_loss), val);
    }
    s
}

pub fn write_loss_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, loss_csv(history))?;
    Ok(())
}

/// Mean loss over `states` with parameters frozen, evaluated in chunks.
pub fn evaluate_loss(
    policy: &PolicyNet,
    lyap: &LyapunovNet,
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    states: &DenseMatrix,
    chunk: usize,
) -> Result<f64> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::invalid("cannot evaluate the loss on an empty set"));
    }
    let chunk = chunk.max(1);
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let g = build_train_graph(policy, lyap, model, spec, &states.select_rows(&idx), false)?;
        total += g.loss_value() * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

pub fn train(
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    policy: PolicyNet,
    lyap: LyapunovNet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, spec, policy, lyap, cfg, |_| {})
}

/// Runs the loop, calling `progress` after every epoch.
///
/// Both networks are updated from the same backward pass. Any non-finite
/// value during a batch aborts with [`Error::Diverged`].
pub fn train_with_progress(
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    mut policy: PolicyNet,
    mut lyap: LyapunovNet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let [train_set, val_set, test_set] = cfg.datasets(model)?;

    let mut opt_policy = AdamWState::new(policy.parameters());
    let mut opt_lyap = AdamWState::new(lyap.parameters());
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, PolicyNet, LyapunovNet)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |e: Error| {
                if e.is_numeric() {
                    Error::Diverged { epoch, batch: b + 1 }
                } else {
                    e
                }
            };
            let batch = train_set.states.select_rows(idx);
            let graph = build_train_graph(&policy, &lyap, model, spec, &batch, true).map_err(diverged)?;
            let loss = graph.loss_value();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            let (gp, gl) = graph.gradients().map_err(diverged)?;
            opt_policy.step(&mut policy.parameters_mut(), &gp, &cfg.optimizer)?;
            opt_lyap.step(&mut lyap.parameters_mut(), &gl, &cfg.optimizer)?;
            total += loss * idx.len() as f64;
        }
        let val_loss = if val_set.is_empty() {
            None
        } else {
            let v = evaluate_loss(&policy, &lyap, model, spec, &val_set.states, cfg.batch_size.max(1000))
                .map_err(|e| if e.is_numeric() { Error::Diverged { epoch, batch: 0 } } else { e })?;
            Some(v)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
        };
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(_, bv, _, _)| v < *bv) {
                best = Some((epoch, v, policy.clone(), lyap.clone()));
            }
        }
        progress(&record);
        history.push(record);
    }

    Ok(TrainOutcome {
        policy,
        lyapunov: lyap,
        history,
        best: best.map(|(e, _, p, l)| (e, p, l)),
        test_set,
    })
}
