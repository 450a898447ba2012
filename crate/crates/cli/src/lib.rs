//! Subcommands of the `nldpc` binary.
//!
//! Every command returns a process exit code: 0 on success, 2 for bad
//! input or configuration, 3 when training or simulation blows up
//! numerically, and 4 when verification produces a vacuous certificate.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nldpc::config::RunConfig;
use nldpc::export::{export_lyapunov_surface, export_phase_portrait, export_trajectory, export_vdiff_maps, GridSpec};
use nldpc::rollout::{simulate_closed_loop, DEFAULT_SIM_STEPS};
use nldpc::trainer::{load_checkpoint, save_checkpoint, train_with_progress, write_loss_csv, Checkpoint, Snapshot, TrainingMeta};
use nldpc::verifier::verify;
use nldpc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VACUOUS: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nldpc", version, about = "Neural Lyapunov differentiable predictive control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Phase,
    Surface,
    Vdiff,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train policy and Lyapunov networks from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with a `.loss.csv` suffix.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Closed-loop run from one initial state.
    Simulate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = DEFAULT_SIM_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampled probabilistic certificate of a trained checkpoint.
    Verify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid and trajectory data for phase portraits, surfaces and maps.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        what: ExportWhat,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 16)]
        trajectories: usize,
        #[arg(long, default_value_t = DEFAULT_SIM_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failed command: exit code plus message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

/// Parses `args` (program name first), runs the command, and reports
/// errors on standard error.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cmd: &Command) -> Result<i32, Failure> {
    match cmd {
        Command::Train {
            config,
            out,
            loss_csv,
            quiet,
        } => cmd_train(config, out, loss_csv.as_deref(), *quiet),
        Command::Simulate { ckpt, x0, steps, out } => cmd_simulate(ckpt, x0, *steps, out),
        Command::Verify {
            ckpt,
            config,
            samples,
            delta,
            out,
        } => cmd_verify(ckpt, config, *samples, *delta, out),
        Command::Export {
            ckpt,
            what,
            grid,
            trajectories,
            steps,
            out,
        } => cmd_export(ckpt, *what, *grid, *trajectories, *steps, out),
    }
}

fn default_loss_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

pub fn cmd_train(config: &Path, out: &Path, loss_csv: Option<&Path>, quiet: bool) -> Result<i32, Failure> {
    let cfg = RunConfig::load(config)?;
    let r = cfg.resolve()?;
    let (policy, lyap) = cfg.build_networks(r.model.as_ref())?;
    let epochs = cfg.training.epochs;
    let outcome = train_with_progress(r.model.as_ref(), &r.spec, policy, lyap, &cfg.training, |rec| {
        if !quiet && (rec.epoch == 1 || rec.epoch % 10 == 0 || rec.epoch == epochs) {
            let val = rec.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            eprintln!("epoch {:>4}/{epochs}  train {:.6}  val {val}", rec.epoch, rec.train_loss);
        }
    })?;
    let last = outcome.history.last();
    let meta = TrainingMeta {
        epochs,
        final_train_loss: last.map(|r| r.train_loss),
        final_val_loss: last.and_then(|r| r.val_loss),
        best_epoch: outcome.best.as_ref().map(|b| b.0),
    };
    let mut ckpt = Checkpoint::new(
        &outcome.policy,
        &outcome.lyapunov,
        cfg.training.seed,
        cfg.system.clone(),
        cfg.problem.clone(),
        meta,
    );
    ckpt.best = outcome.best.as_ref().map(|(epoch, p, l)| Snapshot {
        epoch: *epoch,
        policy: p.to_record(),
        lyapunov: l.to_record(),
    });
    save_checkpoint(&ckpt, out)?;
    let loss_path = loss_csv.map(Path::to_path_buf).unwrap_or_else(|| default_loss_path(out));
    write_loss_csv(&outcome.history, &loss_path)?;
    Ok(EXIT_OK)
}

pub fn parse_state(text: &str, n_x: usize) -> Result<Vec<f64>, Failure> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_failure(format!("cannot parse initial state {text:?}: {e}")))?;
    if values.len() != n_x {
        return Err(config_failure(format!("initial state has {} entries, model expects {n_x}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(config_failure("initial state must be finite"));
    }
    Ok(values)
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(|e| config_failure(format!("checkpoint {}: {e}", path.display())))
}

pub fn cmd_simulate(ckpt: &Path, x0: &str, steps: usize, out: &Path) -> Result<i32, Failure> {
    let ck = open_checkpoint(ckpt)?;
    let model = ck.model()?;
    let spec = ck.problem_spec(model.as_ref())?;
    let x0 = parse_state(x0, model.n_x())?;
    if steps == 0 {
        return Err(config_failure("--steps must be at least 1"));
    }
    let (policy, lyap) = (ck.policy()?, ck.lyapunov()?);
    let sim = simulate_closed_loop(&policy, &lyap, model.as_ref(), &spec, &x0, steps)?;
    export_trajectory(&sim, out)?;
    if sim.diverged {
        eprintln!("warning: trajectory diverged after {} steps", sim.steps());
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(ckpt: &Path, config: &Path, samples: Option<usize>, delta: Option<f64>, out: &Path) -> Result<i32, Failure> {
    let cfg = RunConfig::load(config)?;
    let ck = open_checkpoint(ckpt)?;
    let model = ck.model()?;
    let spec = ck.problem_spec(model.as_ref())?;
    let cr = cfg.resolve()?;
    if (cr.model.n_x(), cr.model.n_u(), cr.spec.horizon) != (model.n_x(), model.n_u(), spec.horizon) {
        return Err(config_failure("config and checkpoint describe different problem dimensions"));
    }
    let mut vcfg = cfg.verify_config();
    if let Some(m) = samples {
        vcfg.samples = m;
    }
    if let Some(d) = delta {
        vcfg.delta = d;
    }
    if vcfg.samples == 0 {
        return Err(config_failure("--samples must be at least 1"));
    }
    if !(vcfg.delta > 0.0 && vcfg.delta < 1.0) {
        return Err(config_failure(format!("--delta must lie in (0, 1), got {}", vcfg.delta)));
    }
    let criteria = cfg.criteria(&spec);
    let (policy, lyap) = (ck.policy()?, ck.lyapunov()?);
    let report = verify(&policy, &lyap, model.as_ref(), &spec, &criteria, &vcfg, Some(ck.seed))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = report.to_json()?;
    std::fs::write(out, text).map_err(Error::from)?;
    eprintln!(
        "sigma {:.6}  alpha {:.6}  kappa {:.6}{}",
        report.sigma_tilde,
        report.alpha,
        report.kappa,
        if report.vacuous { "  (vacuous)" } else { "" }
    );
    Ok(if report.vacuous { EXIT_VACUOUS } else { EXIT_OK })
}

pub const EXPORT_FILES: [&str; 5] = ["phase.csv", "field.csv", "surface.csv", "vdiff_learned.csv", "vdiff_quadratic.csv"];

pub fn cmd_export(
    ckpt: &Path,
    what: ExportWhat,
    grid: usize,
    trajectories: usize,
    steps: usize,
    out: &Path,
) -> Result<i32, Failure> {
    let ck = open_checkpoint(ckpt)?;
    let model = ck.model()?;
    let g = GridSpec::default_for(model.as_ref(), grid)?;
    let (policy, lyap) = (ck.policy()?, ck.lyapunov()?);
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let all = what == ExportWhat::All;
    if all || what == ExportWhat::Phase {
        export_phase_portrait(
            &policy,
            model.as_ref(),
            &g,
            trajectories,
            steps,
            &out.join(EXPORT_FILES[0]),
            &out.join(EXPORT_FILES[1]),
        )?;
    }
    if all || what == ExportWhat::Surface {
        export_lyapunov_surface(&lyap, model.n_x(), &g, &out.join(EXPORT_FILES[2]))?;
    }
    if all || what == ExportWhat::Vdiff {
        export_vdiff_maps(&lyap, &policy, model.as_ref(), &g, &out.join(EXPORT_FILES[3]), &out.join(EXPORT_FILES[4]))?;
    }
    Ok(EXIT_OK)
}

/// Caps the global thread pool from `NLDPC_THREADS` when set.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("NLDPC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_failure(format!("NLDPC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_failure(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_parsing() {
        assert_eq!(parse_state("1, -2.5", 2).unwrap(), vec![1.0, -2.5]);
        assert_eq!(parse_state("a,b", 2).unwrap_err().code, EXIT_CONFIG);
        assert_eq!(parse_state("1", 2).unwrap_err().code, EXIT_CONFIG);
        assert_eq!(parse_state("1,inf", 2).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::Diverged { epoch: 1, batch: 2 }).code, EXIT_NUMERIC);
        assert_eq!(Failure::from(Error::Config("x".into())).code, EXIT_CONFIG);
    }

    #[test]
    fn unknown_export_kind_is_rejected() {
        let code = run_from_args(["nldpc", "export", "--ckpt", "a", "--what", "nope", "--out", "d"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn loss_path_default() {
        assert_eq!(default_loss_path(Path::new("run/di.json")), PathBuf::from("run/di.json.loss.csv"));
    }
}
