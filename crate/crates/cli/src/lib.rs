//! Command-line surface for `lowrank-bandit`.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lowrank_bandit::environments::{fit_pseudo_ground_truth, ReplayEnv};
use lowrank_bandit::estimator::{solve_nuclear_ls, SolverSettings};
use lowrank_bandit::harness::{aggregate, loo_prediction_error, loo_settings, replay_gain, run_trial, run_trial_with, InitActions};
use lowrank_bandit::interpret::{normalize_loadings, scaled_action_loadings, spectral_decompose};
use lowrank_bandit::io::{load_history_csv, load_theta, write_aggregate, write_matrix, IoError, MetricsWriter, ThetaMeta};
use lowrank_bandit::policy::exploration_rounds;
use lowrank_bandit::rng::{trial_seed, PRNG_NAME};
use lowrank_bandit::{AlgorithmConfig, BanditError, Lambda0, Log, Metrics};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig};

/// A failure together with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numerical(m) => m,
        }
    }
}

fn is_numerical(e: &BanditError) -> bool {
    matches!(
        e,
        BanditError::NonFinite(_)
            | BanditError::NonFiniteObjective { .. }
            | BanditError::DegenerateDenominator(_)
            | BanditError::Aborted { .. }
    )
}

impl From<BanditError> for CliError {
    fn from(e: BanditError) -> Self {
        if is_numerical(&e) {
            Self::Numerical(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Model(m) => m.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.0)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "lrbandit", version, about = "Low-rank bilinear contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Paths of a logged history; `--dir` supplies defaults for all three.
#[derive(Args, Debug, Clone)]
struct LogArgs {
    /// Directory holding actions.csv, contexts.csv and rewards.csv.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    actions: Option<PathBuf>,
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    rewards: Option<PathBuf>,
}

impl LogArgs {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        match (explicit, &self.dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(format!("{name}.csv"))),
            (None, None) => Err(CliError::Usage(format!("need --{name} or --dir"))),
        }
    }

    fn load(&self) -> CliResult<Log> {
        let a = self.path(&self.actions, "actions")?;
        let c = self.path(&self.contexts, "contexts")?;
        let r = self.path(&self.rewards, "rewards")?;
        Ok(load_history_csv(&a, &c, &r)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run simulated trials and write metrics.csv, aggregate.csv and metadata.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit Θ̂ on a logged history at a fixed λ and print it as CSV.
    Estimate {
        #[command(flatten)]
        log: LogArgs,
        #[arg(long)]
        lambda: f64,
        /// Write the matrix here, with a `.meta.json` sidecar, instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a pseudo ground truth on a log and run the policy against it.
    Replay {
        #[command(flatten)]
        log: LogArgs,
        /// Regularization of the pseudo-ground-truth fit.
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 10)]
        t_init: usize,
        #[arg(long, default_value_t = 0.1)]
        h: f64,
        #[arg(long, default_value_t = 1.5)]
        exponent: f64,
        /// "auto" or a positive number.
        #[arg(long, default_value = "auto")]
        lambda0: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Leave-one-round-out prediction error ratio at a fixed λ.
    Loo {
        #[command(flatten)]
        log: LogArgs,
        #[arg(long)]
        lambda: f64,
    },
    /// Spectral summary of a saved Θ̂ as JSON.
    Interpret {
        /// Headerless CSV matrix.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        rel_tol: f64,
        /// Average context, comma separated; adds scaled action loadings.
        #[arg(long, value_delimiter = ',')]
        x_bar: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        action_labels: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        context_labels: Option<Vec<String>>,
    },
    /// Print the exploration rounds up to T.
    Schedule {
        #[arg(long = "T")]
        horizon: u64,
        #[arg(long, default_value_t = 1.5)]
        exponent: f64,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Simulate {
            config,
            seed,
            threads,
            out_dir,
        } => simulate(&config, seed, threads, out_dir),
        Command::Estimate { log, lambda, out } => estimate(&log, lambda, out),
        Command::Replay {
            log,
            lambda,
            t_init,
            h,
            exponent,
            lambda0,
            seed,
            out_dir,
        } => {
            let lambda0 = parse_lambda0(&lambda0)?;
            let config = AlgorithmConfig {
                t_init,
                h,
                lambda0,
                exploration_exponent: exponent,
                seed,
                ..AlgorithmConfig::default()
            };
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            replay(&log, lambda, config, out_dir)
        }
        Command::Loo { log, lambda } => {
            let history = log.load()?;
            let ratio = loo_prediction_error(&history, lambda, &loo_settings())?;
            emit(&ratio.to_string())
        }
        Command::Interpret {
            theta,
            rel_tol,
            x_bar,
            action_labels,
            context_labels,
        } => interpret(&theta, rel_tol, x_bar, action_labels, context_labels),
        Command::Schedule { horizon, exponent } => {
            if !(exponent > 1.0 && exponent.is_finite()) {
                return Err(CliError::Usage("--exponent must be > 1".into()));
            }
            let rounds: Vec<String> = exploration_rounds(horizon, exponent).iter().map(u64::to_string).collect();
            emit(&rounds.join(","))
        }
    }
}

fn parse_lambda0(s: &str) -> CliResult<Lambda0> {
    if s == "auto" {
        return Ok(Lambda0::Auto);
    }
    s.parse::<f64>()
        .map(Lambda0::Fixed)
        .map_err(|_| CliError::Usage(format!("--lambda0 must be \"auto\" or a number, got {s:?}")))
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CliResult<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

fn write_trials(dir: &Path, trials: &[Metrics]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("metrics.csv");
    let mut writer = MetricsWriter::new(create(&path)?, true)?;
    for (k, m) in trials.iter().enumerate() {
        writer.write_trial(k, m)?;
    }
    writer.finish()?.flush().map_err(|e| io_err(&path, e))?;
    let path = dir.join("aggregate.csv");
    let mut out = create(&path)?;
    write_aggregate(&aggregate(trials)?, &mut out)?;
    out.flush().map_err(|e| io_err(&path, e))
}

fn simulate(config_path: &Path, seed: Option<u64>, threads: usize, out_dir: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = ExperimentConfig::from_file(config_path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let resolved = cfg.resolve()?;
    let out_dir = out_dir
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("missing required key `out_dir` (or pass --out-dir)".into()))?;
    if threads == 0 {
        return Err(CliError::Usage("--threads must be ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..resolved.trials as u64).map(|k| trial_seed(resolved.seed, k)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<CliResult<Metrics>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let env = cfg.build_env(s)?;
                let algorithm = AlgorithmConfig {
                    seed: s,
                    ..resolved.algorithm.clone()
                };
                Ok(run_trial(env.as_env(), &algorithm, resolved.horizon, &resolved.solver)?)
            })
            .collect()
    });
    let trials = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    write_trials(&out_dir, &trials)?;
    let meta = json!({
        "prng": PRNG_NAME,
        "trial_seed": "splitmix64(master ^ trial_index)",
        "master_seed": resolved.seed,
        "trial_seeds": seeds,
        "config": cfg,
    });
    write_json(&out_dir.join("metadata.json"), &meta)
}

fn estimate(log: &LogArgs, lambda: f64, out: Option<PathBuf>) -> CliResult<()> {
    let history = log.load()?;
    let report = solve_nuclear_ls(&history, lambda, None, &SolverSettings::default())?;
    eprintln!(
        "iterations={} converged={} objective={}",
        report.iterations, report.converged, report.final_objective
    );
    let theta = report.theta_hat.entries();
    match out {
        None => {
            let stdout = std::io::stdout();
            write_matrix(theta, stdout.lock())?;
        }
        Some(path) => {
            write_matrix(theta, create(&path)?)?;
            let meta = ThetaMeta {
                d_a: theta.nrows(),
                d_x: theta.ncols(),
                lambda: Some(lambda),
                round: Some(history.len()),
                prng: PRNG_NAME.to_string(),
            };
            let mut sidecar = path.clone().into_os_string();
            sidecar.push(".meta.json");
            write_json(Path::new(&sidecar), &meta)?;
        }
    }
    Ok(())
}

fn replay(log: &LogArgs, lambda: f64, config: AlgorithmConfig, out_dir: Option<PathBuf>) -> CliResult<()> {
    let history = log.load()?;
    let (theta, sigma) = fit_pseudo_ground_truth(&history, lambda)?;
    let env = ReplayEnv::new(&history, theta.clone(), sigma, config.seed)?;
    if history.len() < config.t_init {
        return Err(CliError::Data(format!(
            "log has {} rounds, fewer than t_init = {}",
            history.len(),
            config.t_init
        )));
    }
    let init = InitActions::Given(history.rounds()[..config.t_init].iter().map(|r| r.action.clone()).collect());
    let mut trial = run_trial_with(&env, &config, env.horizon(), &SolverSettings::default(), &init)?;
    let gain = replay_gain(&history, &trial, &theta)?;
    trial.gain = Some(gain.clone());
    emit(&format!("pseudo_sigma={sigma}"))?;
    match gain.last().copied().flatten() {
        Some(g) => emit(&format!("final_gain={g}"))?,
        None => emit("final_gain=")?,
    }
    if let Some(dir) = out_dir {
        write_trials(&dir, std::slice::from_ref(&trial))?;
        write_matrix(theta.entries(), create(&dir.join("pseudo_theta.csv"))?)?;
    }
    Ok(())
}

fn labelled(values: &DVector<f64>, labels: &Option<Vec<String>>, prefix: &str) -> serde_json::Value {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let label = labels.as_ref().map_or_else(|| format!("{prefix}_{}", i + 1), |l| l[i].clone());
            json!({ "label": label, "value": v })
        })
        .collect()
}

fn interpret(
    theta_path: &Path,
    rel_tol: f64,
    x_bar: Option<Vec<f64>>,
    action_labels: Option<Vec<String>>,
    context_labels: Option<Vec<String>>,
) -> CliResult<()> {
    let theta = load_theta::<f64>(theta_path)?;
    let report = spectral_decompose(&theta, rel_tol)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_labels(action_labels, context_labels)?;
    let scaled = match &x_bar {
        Some(x) => Some(scaled_action_loadings(&report, &DVector::from_column_slice(x))?),
        None => None,
    };
    let factors: Vec<serde_json::Value> = (0..report.effective_rank)
        .map(|j| {
            let mut f = json!({
                "index": j + 1,
                "singular_value": report.singular_values[j],
                "action_loadings": labelled(&report.left.column(j).into_owned(), &report.action_labels, "a"),
                "context_loadings": labelled(&report.right.column(j).into_owned(), &report.context_labels, "x"),
            });
            if let Some(s) = &scaled {
                let col = s.column(j).into_owned();
                f["scaled_action_loadings"] = labelled(&col, &report.action_labels, "a");
                if let Ok(n) = normalize_loadings(&col) {
                    f["normalized_scaled_action_loadings"] = labelled(&n, &report.action_labels, "a");
                }
            }
            f
        })
        .collect();
    let doc = json!({
        "d_a": theta.d_a(),
        "d_x": theta.d_x(),
        "rel_tol": rel_tol,
        "singular_values": report.singular_values.as_slice(),
        "effective_rank": report.effective_rank,
        "factors": factors,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Data(e.to_string()))?;
    emit(&text)
}
