//! Sampling-based probabilistic certificate: closed-loop indicators,
//! empirical risk and a Hoeffding lower bound on the satisfaction
//! probability.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BoxSet, SystemModel};
use crate::error::{Error, Result};
use crate::neural::{LyapunovCandidate, PolicyNet};
use crate::objective::ProblemSpec;
use crate::rollout::{simulate_batch, SimTrajectory, DEFAULT_SIM_STEPS};
use crate::trainer::{sample_initial_conditions, Distribution};

pub const DEFAULT_EQUILIBRIUM_TOL: f64 = 0.1;

/// What a closed-loop run must satisfy to count as a success.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorCriteria {
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    /// Required decrease: `V(x_{k+1}) - V(x_k) < -margin`.
    pub margin: f64,
    pub terminal_box: Option<BoxSet>,
    /// Steps with `‖x_k‖∞` at or below this are exempt from the decrease
    /// condition. `None` demands strict decrease everywhere.
    pub equilibrium_tol: Option<f64>,
}

impl IndicatorCriteria {
    /// Boxes from the problem; terminal check only if `terminal_check`.
    pub fn from_problem(spec: &ProblemSpec, margin: f64, terminal_check: bool, equilibrium_tol: Option<f64>) -> Self {
        IndicatorCriteria {
            state_box: spec.state_box.clone(),
            input_box: spec.input_box.clone(),
            margin,
            terminal_box: if terminal_check { spec.terminal_box.clone() } else { None },
            equilibrium_tol,
        }
    }

    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        self.state_box.validate()?;
        self.input_box.validate()?;
        if self.state_box.dim() != n_x || self.input_box.dim() != n_u {
            return Err(Error::Config(format!(
                "criteria boxes have dims ({}, {}), model has ({n_x}, {n_u})",
                self.state_box.dim(),
                self.input_box.dim()
            )));
        }
        if let Some(t) = &self.terminal_box {
            t.validate()?;
            if t.dim() != n_x {
                return Err(Error::Config("terminal box dimension differs from n_x".into()));
            }
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if let Some(tol) = self.equilibrium_tol {
            if !(tol >= 0.0) {
                return Err(Error::Config(format!("equilibrium tolerance must be >= 0, got {tol}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Diverged,
    State,
    Input,
    Lyapunov,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    /// Step index `k` at which it first occurred.
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl Verdict {
    pub fn indicator(&self) -> u8 {
        u8::from(self.pass)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Checks a trajectory against `criteria`, reporting the earliest violation.
/// Within one step the order is state, input, Lyapunov decrease.
pub fn evaluate_indicator(traj: &SimTrajectory, criteria: &IndicatorCriteria) -> Verdict {
    let fail = |kind, step| Verdict {
        pass: false,
        failure: Some(Failure { kind, step }),
    };
    let steps = traj.controls.len();
    for k in 0..steps {
        let x = &traj.states[k];
        if !criteria.state_box.contains(x) {
            return fail(FailureKind::State, k);
        }
        if !criteria.input_box.contains(&traj.controls[k]) {
            return fail(FailureKind::Input, k);
        }
        let exempt = criteria.equilibrium_tol.is_some_and(|tol| inf_norm(x) <= tol);
        let dv = traj.values[k + 1] - traj.values[k];
        if !exempt && !(dv < -criteria.margin) {
            return fail(FailureKind::Lyapunov, k);
        }
    }
    if traj.diverged {
        return fail(FailureKind::Diverged, steps);
    }
    let last = traj.final_state();
    if !criteria.state_box.contains(last) {
        return fail(FailureKind::State, steps);
    }
    if let Some(tb) = &criteria.terminal_box {
        if !tb.contains(last) {
            return fail(FailureKind::Terminal, steps);
        }
    }
    Verdict {
        pass: true,
        failure: None,
    }
}

/// Fraction of passing indicators.
pub fn empirical_risk(indicators: &[u8]) -> Result<f64> {
    if indicators.is_empty() {
        return Err(Error::invalid("empirical risk of an empty set"));
    }
    let passed: usize = indicators.iter().map(|&i| usize::from(i != 0)).sum();
    Ok(passed as f64 / indicators.len() as f64)
}

/// Hoeffding margin `α = sqrt(-ln(δ/2) / (2m))` and bound `κ = σ̃ - α`.
/// `κ` is returned unclamped and may be negative.
pub fn hoeffding_bound(sigma: f64, delta: f64, m: usize) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::invalid(format!("empirical risk must lie in [0, 1], got {sigma}")));
    }
    let alpha = (-(delta / 2.0).ln() / (2.0 * m as f64)).sqrt();
    Ok((alpha, sigma - alpha))
}

/// Smallest `m` whose Hoeffding bound at `sigma_target` reaches `kappa`.
pub fn required_samples(sigma_target: f64, kappa: f64, delta: f64) -> Result<usize> {
    if !(sigma_target > kappa) {
        return Err(Error::invalid(format!(
            "target risk {sigma_target} must exceed the bound {kappa}; no sample count suffices"
        )));
    }
    hoeffding_bound(sigma_target, delta, 1)?;
    let gap = sigma_target - kappa;
    let estimate = (-(delta / 2.0).ln() / (2.0 * gap * gap)).ceil();
    if !(estimate < usize::MAX as f64 / 2.0) {
        return Err(Error::invalid("required sample count overflows"));
    }
    let reaches = |m: usize| hoeffding_bound(sigma_target, delta, m).map(|(_, k)| k >= kappa);
    let mut m = (estimate as usize).max(1);
    while !reaches(m)? {
        m += 1;
    }
    while m > 1 && reaches(m - 1)? {
        m -= 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub state: usize,
    pub input: usize,
    pub lyapunov: usize,
    pub terminal: usize,
    pub diverged: usize,
}

impl FailureCounts {
    fn record(&mut self, kind: FailureKind) {
        match kind {
            FailureKind::State => self.state += 1,
            FailureKind::Input => self.input += 1,
            FailureKind::Lyapunov => self.lyapunov += 1,
            FailureKind::Terminal => self.terminal += 1,
            FailureKind::Diverged => self.diverged += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub m: usize,
    pub sigma_tilde: f64,
    pub delta: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// `κ ≤ 0`: the bound says nothing.
    pub vacuous: bool,
    /// Counted by first violation only.
    pub failures: FailureCounts,
    pub seed: u64,
    pub horizon: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub trajectories: Vec<Verdict>,
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub samples: usize,
    pub delta: f64,
    pub seed: u64,
    pub steps: usize,
    pub distribution: Distribution,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 3000,
            delta: 0.01,
            seed: 2024,
            steps: DEFAULT_SIM_STEPS,
            distribution: Distribution::default(),
        }
    }
}

/// Samples fresh initial states, simulates the closed loop and bounds the
/// probability that a run satisfies `criteria`.
///
/// `training_seed` only feeds a warning when it equals the verification seed.
pub fn verify(
    policy: &PolicyNet,
    lyap: &dyn LyapunovCandidate,
    model: &dyn SystemModel,
    spec: &ProblemSpec,
    criteria: &IndicatorCriteria,
    cfg: &VerifyConfig,
    training_seed: Option<u64>,
) -> Result<VerificationReport> {
    hoeffding_bound(1.0, cfg.delta, cfg.samples.max(1))?;
    criteria.validate(model.n_x(), model.n_u())?;
    let mut warnings = Vec::new();
    if training_seed == Some(cfg.seed) {
        warnings.push(format!(
            "verification seed {} equals the training seed; samples may overlap the training set",
            cfg.seed
        ));
    }
    let x0s = sample_initial_conditions(cfg.distribution, cfg.samples, model.state_box(), cfg.seed)?;
    let trajs = simulate_batch(policy, lyap, model, spec, &x0s.states, cfg.steps)?;
    let verdicts: Vec<Verdict> = trajs.iter().map(|t| evaluate_indicator(t, criteria)).collect();
    let mut failures = FailureCounts::default();
    for f in verdicts.iter().filter_map(|v| v.failure) {
        failures.record(f.kind);
    }
    let indicators: Vec<u8> = verdicts.iter().map(Verdict::indicator).collect();
    let sigma = empirical_risk(&indicators)?;
    let (alpha, kappa) = hoeffding_bound(sigma, cfg.delta, cfg.samples)?;
    Ok(VerificationReport {
        m: cfg.samples,
        sigma_tilde: sigma,
        delta: cfg.delta,
        alpha,
        kappa,
        vacuous: kappa <= 0.0,
        failures,
        seed: cfg.seed,
        horizon: cfg.steps,
        warnings,
        trajectories: verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::double_integrator;
    use crate::neural::QuadraticLyapunov;
    use crate::objective::{ProblemConfig, Weight};

    fn criteria(tol: Option<f64>) -> IndicatorCriteria {
        IndicatorCriteria {
            state_box: BoxSet::symmetric(2, 10.0),
            input_box: BoxSet::symmetric(1, 1.0),
            margin: 0.0,
            terminal_box: None,
            equilibrium_tol: tol,
        }
    }

    fn traj(states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> SimTrajectory {
        let values = states.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
        SimTrajectory {
            flags: vec![Default::default(); controls.len()],
            stage_losses: vec![0.0; controls.len()],
            states,
            controls,
            values,
            terminal_violation: false,
            diverged: false,
        }
    }

    #[test]
    fn equilibrium_is_not_strict_decrease() {
        let t = traj(vec![vec![0.0, 0.0]; 3], vec![vec![0.0]; 2]);
        let v = evaluate_indicator(&t, &criteria(None));
        assert_eq!(v.indicator(), 0);
        assert_eq!(v.failure.unwrap().kind, FailureKind::Lyapunov);
        assert_eq!(evaluate_indicator(&t, &criteria(Some(0.1))).indicator(), 1);
    }

    #[test]
    fn input_violation_fails() {
        let t = traj(vec![vec![4.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.0]], vec![vec![0.5], vec![1.5]]);
        let v = evaluate_indicator(&t, &criteria(None));
        assert_eq!(v.failure, Some(Failure { kind: FailureKind::Input, step: 1 }));
    }

    #[test]
    fn decreasing_in_bounds_trajectory_passes() {
        let t = traj(vec![vec![4.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.0]], vec![vec![0.5], vec![-0.5]]);
        assert!(evaluate_indicator(&t, &criteria(None)).pass);
        let mut c = criteria(None);
        c.terminal_box = Some(BoxSet::symmetric(2, 0.5));
        assert_eq!(evaluate_indicator(&t, &c).failure.unwrap().kind, FailureKind::Terminal);
        c.margin = 5.0;
        assert_eq!(evaluate_indicator(&t, &c).failure.unwrap().kind, FailureKind::Lyapunov);
    }

    #[test]
    fn divergence_fails() {
        let mut t = traj(vec![vec![4.0, 0.0], vec![2.0, 0.0]], vec![vec![0.5]]);
        t.diverged = true;
        assert_eq!(evaluate_indicator(&t, &criteria(None)).failure.unwrap().kind, FailureKind::Diverged);
    }

    #[test]
    fn empirical_risk_cases() {
        assert_eq!(empirical_risk(&[1; 10]).unwrap(), 1.0);
        assert_eq!(empirical_risk(&[0; 10]).unwrap(), 0.0);
        let mut v = vec![1u8; 3000];
        v[..3].fill(0);
        assert!((empirical_risk(&v).unwrap() - 0.999).abs() < 1e-15);
        assert!(empirical_risk(&[]).is_err());
    }

    #[test]
    fn hoeffding_values() {
        let (a, k) = hoeffding_bound(1.0, 0.01, 3000).unwrap();
        let oracle = (-(0.005f64).ln() / 6000.0).sqrt();
        assert!((a - oracle).abs() < 1e-15);
        assert!((a - 0.029716).abs() < 1e-5);
        assert!((k - 0.970284).abs() < 1e-5);
        let (a0, k0) = hoeffding_bound(0.0, 0.01, 3000).unwrap();
        assert_eq!(k0, -a0);
        let (a4, _) = hoeffding_bound(1.0, 0.01, 12000).unwrap();
        assert!((a4 - a / 2.0).abs() < 1e-15);
        let (a1, k1) = hoeffding_bound(1.0, 0.01, 1).unwrap();
        assert!((a1 - 1.6276).abs() < 1e-3 && k1 < 0.0);
        assert!(hoeffding_bound(1.0, 0.0, 10).is_err());
        assert!(hoeffding_bound(1.0, 1.0, 10).is_err());
        assert!(hoeffding_bound(1.0, 0.5, 0).is_err());
    }

    #[test]
    fn required_samples_cases() {
        assert_eq!(required_samples(1.0, 0.97, 0.01).unwrap(), 2944);
        assert!(required_samples(0.9, 0.9, 0.01).is_err());
        let m1 = required_samples(1.0, 0.98, 0.01).unwrap() as f64;
        let m2 = required_samples(1.0, 0.99, 0.01).unwrap() as f64;
        assert!((m2 / m1 - 4.0).abs() < 1e-3);
    }

    fn di_spec() -> ProblemSpec {
        ProblemConfig {
            q_x: Weight::Scalar(1.0),
            q_u: Weight::Scalar(1.0),
            q_v: 1.0,
            q_h: 1.0,
            q_g: 1.0,
            q_xf: 0.0,
            horizon: 1,
            terminal_box: None,
            margin: 0.0,
        }
        .resolve(&double_integrator())
        .unwrap()
    }

    #[test]
    fn zero_policy_is_never_certified() {
        let model = double_integrator();
        let spec = di_spec();
        let policy = PolicyNet::zeros(2, &[4], 1, 1).unwrap();
        let cfg = VerifyConfig {
            samples: 200,
            ..Default::default()
        };
        let crit = IndicatorCriteria::from_problem(&spec, 0.0, false, Some(0.1));
        let r = verify(&policy, &QuadraticLyapunov, &model, &spec, &crit, &cfg, None).unwrap();
        assert!(r.sigma_tilde < 0.05);
        assert!(r.vacuous);
        assert_eq!(r.trajectories.len(), 200);
        let again = verify(&policy, &QuadraticLyapunov, &model, &spec, &crit, &cfg, Some(2024)).unwrap();
        assert_eq!(again.trajectories, r.trajectories);
        assert_eq!(again.warnings.len(), 1);
    }
}
