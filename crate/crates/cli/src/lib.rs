//! Command-line front end: configuration, task dispatch and artifact output.
//!
//! Exit codes: `0` success, `1` a verification failed, `2` configuration, usage or task error.

pub mod config;
pub mod output;
pub mod tasks;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RawConfig, RunConfig};
use crate::tasks::{execute, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kolmo",
    version,
    about = "Kernels, samplers, solvers and bound checks for Kolmogorov operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Structure of the operator: dimensions, Q, homogeneity, sampled bounds.
    Describe(Flags),
    /// Γ₀(t, x; T, y), its covariance, and optionally a grid slice.
    KernelEval(Flags),
    /// Chapman–Kolmogorov residual of Γ₀ through an intermediate time.
    KernelCk(Flags),
    /// Exact or Euler–Maruyama samples of the terminal state.
    Sample(Flags),
    /// Finite-difference backward solve, or a fundamental-solution estimate when `eps` is set.
    Solve(Flags),
    /// Dilated operator and kernel scaling residual.
    Scale(Flags),
    /// Fitted on-diagonal constant.
    VerifyNash(Flags),
    /// Fitted Gaussian upper-bound constant.
    VerifyBound(Flags),
    /// Exterior L² tail integrals.
    VerifyTail(Flags),
    /// Decay of solutions whose data vanish near a point.
    VerifyDecay(Flags),
    /// Local sup bound on intrinsic cylinders.
    Moser(Flags),
    /// Runs TASK (or `[task] task` from the config).
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct Flags {
    /// Configuration file (same as --config).
    #[arg(value_name = "CONFIG")]
    config_path: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// A task name, or the configuration file.
    #[arg(value_name = "TASK|CONFIG")]
    first: Option<String>,
    /// Configuration file when TASK is given.
    #[arg(value_name = "CONFIG")]
    second: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Overrides `[task] seed`.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Overrides `[task] n`.
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Overrides `[task] lambda`.
    #[arg(long, value_name = "L")]
    lambda: Option<f64>,
    /// Overrides any `[task]` key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Task(String),
}

/// Parses `args`, runs the task and returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (task, path, common) = match cli.command {
        Command::Run(args) => {
            let (task, path) = match args.first {
                Some(first) => match first.parse::<Task>() {
                    Ok(t) => (Some(t), args.second),
                    Err(_) if args.second.is_none() => (None, Some(PathBuf::from(first))),
                    Err(e) => return Err(CliError::Usage(e)),
                },
                None => (None, args.second),
            };
            (task, path, args.common)
        }
        other => {
            let (task, flags) = match other {
                Command::Describe(f) => (Task::Describe, f),
                Command::KernelEval(f) => (Task::KernelEval, f),
                Command::KernelCk(f) => (Task::KernelCk, f),
                Command::Sample(f) => (Task::Sample, f),
                Command::Solve(f) => (Task::Solve, f),
                Command::Scale(f) => (Task::Scale, f),
                Command::VerifyNash(f) => (Task::VerifyNash, f),
                Command::VerifyBound(f) => (Task::VerifyBound, f),
                Command::VerifyTail(f) => (Task::VerifyTail, f),
                Command::VerifyDecay(f) => (Task::VerifyDecay, f),
                Command::Moser(f) => (Task::Moser, f),
                Command::Run(_) => unreachable!("handled above"),
            };
            (Some(task), flags.config_path, flags.common)
        }
    };
    let path = match (path, common.config.clone()) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "config given both positionally and with --config".into(),
            ))
        }
        (Some(p), None) | (None, Some(p)) => p,
        (None, None) => return Err(CliError::Usage("no configuration file given".into())),
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    apply_overrides(&mut raw, &common)?;
    let task = match task {
        Some(t) => t,
        None => {
            let name = raw
                .section("task")
                .raw("task")
                .ok_or_else(|| {
                    CliError::Usage("no task given and `[task] task` is not set".into())
                })?
                .to_string();
            name.parse::<Task>().map_err(CliError::Usage)?
        }
    };
    let cfg = RunConfig::from_raw(raw)?;

    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Only the first call per process can size the global pool; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let outcome = execute(task, &cfg).map_err(|e| match e {
        tasks::TaskError::Config(c) => CliError::Config(c),
        tasks::TaskError::Failed(msg) => CliError::Task(format!("{task}: {msg}")),
    })?;
    if let Some(dir) = common.out.clone().or_else(|| cfg.output.dir.clone()) {
        outcome
            .artifacts
            .commit(&dir)
            .map_err(|e| CliError::Task(format!("writing outputs to {}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(&outcome.summary).expect("plain data");
    let _ = writeln!(stdout, "{text}");
    Ok(if outcome.verified {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn apply_overrides(raw: &mut RawConfig, common: &Common) -> Result<(), ConfigError> {
    if let Some(s) = common.seed {
        raw.set("task", "seed", &s.to_string())?;
    }
    if let Some(n) = common.n {
        raw.set("task", "n", &n.to_string())?;
    }
    if let Some(l) = common.lambda {
        raw.set("task", "lambda", &l.to_string())?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(kv.clone()))?;
        raw.set("task", k.trim(), v)?;
    }
    Ok(())
}
