//! Differentiable policy → dynamics → loss graph for training, and
//! receding-horizon simulation for evaluation.

use crate::autodiff::{DenseMatrix, NodeId, Tape};
use crate::dynamics::{BoxSet, SystemModel};
use crate::error::{Error, Result};
use crate::export::GridSpec;
use crate::neural::{LyapunovCandidate, LyapunovNet, Parametric, PolicyNet};
use crate::objective::{nldpc_loss, LossInputs, ProblemSpec};

/// Absolute cap on the divergence threshold.
pub const DIVERGENCE_BOUND: f64 = 1e6;
/// A run diverges once `‖x‖∞` exceeds this multiple of the state box.
pub const DIVERGENCE_FACTOR: f64 = 100.0;
pub const DEFAULT_SIM_STEPS: usize = 50;

/// Training graph for one batch of initial conditions.
///
/// The policy maps each `x0` to its whole control sequence, which is then
/// rolled out open-loop over the horizon.
pub struct TrainRollout {
    pub tape: Tape,
    pub policy_params: Vec<NodeId>,
    pub lyapunov_params: Vec<NodeId>,
    /// `N + 1` nodes of shape `m x n_x`.
    pub states: Vec<NodeId>,
    /// `N` nodes of shape `m x n_u`.
    pub controls: Vec<NodeId>,
    /// `N + 1` nodes of shape `m x 1`.
    pub values: Vec<NodeId>,
    pub loss: NodeId,
}

impl TrainRollout {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    /// `(N + 1) x n_x` state trajectory of batch member `i`.
    pub fn state_trajectory(&self, i: usize) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = self.states.iter().map(|&s| self.tape.value(s).row(i).to_vec()).collect();
        DenseMatrix::from_rows(&rows).expect("uniform rows")
    }

    /// `N x n_u` control sequence of batch member `i`.
    pub fn control_sequence(&self, i: usize) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = self.controls.iter().map(|&u| self.tape.value(u).row(i).to_vec()).collect();
        DenseMatrix::from_rows(&rows).expect("uniform rows")
    }

    /// Reverse sweep; returns `(policy grads, lyapunov grads)` in the nets'
    /// canonical parameter order.
    pub fn gradients(&self) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
        let g = self.tape.backward(self.loss)?;
        let pick = |ids: &[NodeId]| {
            ids.iter()
                .map(|id| g.get(*id).cloned().ok_or_else(|| Error::invalid("parameter not bound as trainable")))
                .collect::<Result<Vec<_>>>()
        };
        Ok((pick(&self.policy_params)?, pick(&self.lyapunov_params)?))
    }
}

fn check_dims(policy: &PolicyNet, lyap: &LyapunovNet, model: &dyn SystemModel, spec: &ProblemSpec) -> Result<()> {
    let ok = policy.n_x() == model.n_x()
        && lyap.n_x() == model.n_x()
        && policy.n_u() == model.n_u()
        && policy.horizon() == spec.horizon
        && spec.n_x() == model.n_x()
        && spec.n_u() == model.n_u();
    if !ok {
        return Err(Error::invalid(format!(
            "inconsistent dimensions: model (n_x {}, n_u {}), policy (n_x {}, n_u {}, N {}), \
             lyapunov n_x {}, problem (n_x {}, n_u {}, N {})",
            model.n_x(),
            model.n_u(),
            policy.n_x(),
            policy.n_u(),
            policy.horizon(),
            lyap.n_x(),
            spec.n_x(),
            spec.n_u(),
            spec.horizon
        )));
    }
    Ok(())
}

/// Builds the loss graph for a batch of initial states (`m x n_x`).
/// With `trainable = false` parameters enter as constants and the graph is
/// only good for evaluating the loss.
pub fn build_train_graph(
    policy: &PolicyNet,
    lyap: &LyapunovNet,
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    x0: &DenseMatrix,
    trainable: bool,
) -> Result<TrainRollout> {
    check_dims(policy, lyap, model, spec)?;
    if x0.cols() != model.n_x() {
        return Err(Error::Shape {
            op: "build_train_graph",
            lhs: x0.shape(),
            rhs: (x0.rows(), model.n_x()),
        });
    }
    let mut tape = Tape::new();
    let (policy_params, lyapunov_params) = if trainable {
        (policy.bind(&mut tape)?, lyap.bind(&mut tape)?)
    } else {
        (policy.bind_frozen(&mut tape)?, lyap.bind_frozen(&mut tape)?)
    };
    let n_u = model.n_u();
    let x_init = tape.constant(x0.clone())?;
    let sequence = policy.forward(&mut tape, &policy_params, x_init)?;

    let mut states = vec![x_init];
    let mut controls = Vec::with_capacity(spec.horizon);
    for k in 0..spec.horizon {
        let u = tape.slice_cols(sequence, k * n_u, n_u)?;
        let next = model.step(&mut tape, states[k], u)?;
        controls.push(u);
        states.push(next);
    }
    let values = states
        .iter()
        .map(|&x| lyap.forward(&mut tape, &lyapunov_params, x))
        .collect::<Result<Vec<_>>>()?;
    let loss = nldpc_loss(
        spec,
        &mut tape,
        &LossInputs {
            states: &states,
            controls: &controls,
            values: &values,
        },
    )?;
    Ok(TrainRollout {
        tape,
        policy_params: if trainable { policy_params } else { vec![] },
        lyapunov_params: if trainable { lyapunov_params } else { vec![] },
        states,
        controls,
        values,
        loss,
    })
}

/// Violations observed at one closed-loop step `k` (state `x_k`, input `u_k`,
/// and the change `V(x_{k+1}) - V(x_k)`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub state: bool,
    pub input: bool,
    pub lyapunov: bool,
}

/// Receding-horizon closed-loop run, stored as plain numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    /// `x_0 ..= x_T`, shorter when the run diverged.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `V(x_k)` for every stored state.
    pub values: Vec<f64>,
    pub stage_losses: Vec<f64>,
    pub flags: Vec<StepFlags>,
    /// Final state outside the terminal set (false when none is defined).
    pub terminal_violation: bool,
    pub diverged: bool,
}

impl SimTrajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds x0")
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖x‖∞` threshold past which a simulated run counts as diverged.
pub fn divergence_bound(state_box: &BoxSet) -> f64 {
    let reach = state_box.lo.iter().chain(&state_box.hi).fold(0.0f64, |m, v| m.max(v.abs()));
    (DIVERGENCE_FACTOR * reach).min(DIVERGENCE_BOUND)
}

fn first_actions(policy: &PolicyNet, states: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let params = policy.bind_frozen(&mut tape)?;
    let x = tape.constant(states.clone())?;
    let seq = policy.forward(&mut tape, &params, x)?;
    let u = tape.slice_cols(seq, 0, policy.n_u())?;
    Ok(tape.value(u).clone())
}

/// One closed-loop step `x⁺ = f(x, π(x)_0)` for a batch of row states.
pub fn closed_loop_step(policy: &PolicyNet, model: &dyn SystemModel, states: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let u = first_actions(policy, states)?;
    let next = model.step_values(states, &u)?;
    Ok((u, next))
}

/// Simulates every row of `x0s` for `steps` receding-horizon steps.
/// Rows are advanced together; a row leaves the batch once it diverges.
pub fn simulate_batch(
    policy: &PolicyNet,
    lyap: &dyn LyapunovCandidate,
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    x0s: &DenseMatrix,
    steps: usize,
) -> Result<Vec<SimTrajectory>> {
    if steps == 0 {
        return Err(Error::invalid("closed-loop simulation needs at least one step"));
    }
    if x0s.cols() != model.n_x() || policy.n_x() != model.n_x() || policy.n_u() != model.n_u() {
        return Err(Error::Shape {
            op: "simulate_closed_loop",
            lhs: x0s.shape(),
            rhs: (policy.n_x(), model.n_x()),
        });
    }
    let bound = divergence_bound(&spec.state_box);
    let v0 = lyap.eval_rows(x0s)?;
    let mut trajs: Vec<SimTrajectory> = (0..x0s.rows())
        .map(|i| SimTrajectory {
            states: vec![x0s.row(i).to_vec()],
            controls: Vec::with_capacity(steps),
            values: vec![v0[i]],
            stage_losses: Vec::with_capacity(steps),
            flags: Vec::with_capacity(steps),
            terminal_violation: false,
            diverged: inf_norm(x0s.row(i)) > bound,
        })
        .collect();
    let mut active: Vec<usize> = (0..trajs.len()).filter(|&i| !trajs[i].diverged).collect();
    let mut current = x0s.select_rows(&active);

    for _ in 0..steps {
        if active.is_empty() {
            break;
        }
        let (u, next) = closed_loop_step(policy, model, &current)?;
        let v_next = lyap.eval_rows(&next)?;
        let mut keep = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let t = &mut trajs[i];
            let x = current.row(r);
            let ui = u.row(r);
            let v_now = *t.values.last().expect("x0 value");
            t.flags.push(StepFlags {
                state: !spec.state_box.contains(x),
                input: !spec.input_box.contains(ui),
                lyapunov: v_next[r] - v_now >= 0.0,
            });
            t.stage_losses.push(spec.stage_value(x, ui));
            t.controls.push(ui.to_vec());
            t.states.push(next.row(r).to_vec());
            t.values.push(v_next[r]);
            if inf_norm(next.row(r)) > bound {
                t.diverged = true;
            } else {
                keep.push(r);
            }
        }
        current = next.select_rows(&keep);
        active = keep.iter().map(|&r| active[r]).collect();
    }
    if let Some(tb) = &spec.terminal_box {
        for t in &mut trajs {
            t.terminal_violation = !tb.contains(t.final_state());
        }
    }
    Ok(trajs)
}

/// Closed-loop run from one initial state.
pub fn simulate_closed_loop(
    policy: &PolicyNet,
    lyap: &dyn LyapunovCandidate,
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    x0: &[f64],
    steps: usize,
) -> Result<SimTrajectory> {
    let mut out = simulate_batch(policy, lyap, model, spec, &DenseMatrix::row_vector(x0), steps)?;
    Ok(out.remove(0))
}

/// `V(f(x, π(x))) - V(x)` at every grid point, in grid order
/// (`res_i x res_j`, first slice dimension outermost).
pub fn lyapunov_difference_field(
    lyap: &dyn LyapunovCandidate,
    policy: &PolicyNet,
    model: &dyn SystemModel,
    grid: &GridSpec,
) -> Result<DenseMatrix> {
    let pts = grid.points(model.n_x())?;
    let (_, next) = closed_loop_step(policy, model, &pts)?;
    let v_now = lyap.eval_rows(&pts)?;
    let v_next = lyap.eval_rows(&next)?;
    let diff = v_next.iter().zip(&v_now).map(|(a, b)| a - b).collect();
    DenseMatrix::new(grid.resolution.0, grid.resolution.1, diff)
}
