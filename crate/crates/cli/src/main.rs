//! `lcen`: generate datasets, fit sparse nonlinear models, predict, forecast,
//! sweep cutoffs, compare ablated pipelines and report VIFs.
//!
//! Exit codes: 0 success (degenerate models included, with a warning),
//! 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcen::LcenError;
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lcen(#[from] LcenError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Lcen(e) => match e {
                LcenError::InvalidConfig(_) | LcenError::TermParse { .. } => 1,
                LcenError::AllCombinationsFailed(_) | LcenError::Numerical(_) => 3,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lcen",
    version,
    about = "Sparse, interpretable nonlinear regression (LASSO, clip, elastic net)"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; each maps onto a config key and
/// overrides the config file.
#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LCEN, LC, ENC, LEN, LCL or ENCEN.
    #[arg(long, global = true)]
    pipeline: Option<String>,
    /// Comma-separated expansion degrees, e.g. `1,2,3`.
    #[arg(long = "degree-list", global = true, value_name = "LIST")]
    degree_list: Option<String>,
    /// Comma-separated lags, e.g. `0` or `0,1,2`.
    #[arg(long, global = true, value_name = "LIST")]
    lag: Option<String>,
    #[arg(long, global = true)]
    cutoff: Option<f64>,
    /// Target column name.
    #[arg(long, global = true)]
    target: Option<String>,
    /// Any other config key, e.g. `--set folds=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated dataset as CSV plus a JSON sidecar with the true model.
    Gen(GenArgs),
    /// Fit a pipeline and write the model JSON.
    Fit {
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write the full cross-validation tables as TSV.
        #[arg(long = "cv-out", value_name = "FILE")]
        cv_out: Option<PathBuf>,
    },
    /// One-step predictions for every row; metrics when the target is present.
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Recursive multi-step forecast from the end of a history file.
    Forecast {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        history: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        /// Inputs for the forecast steps, one row per step.
        #[arg(long, value_name = "FILE")]
        future: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Fit once, then re-clip and refit at each larger cutoff.
    Sweep {
        data: PathBuf,
        /// Ascending comma-separated cutoffs; the first is used for the fit.
        #[arg(long, value_name = "LIST")]
        cutoffs: Option<String>,
        /// Held-out test file; otherwise the last `test_fraction` of rows.
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare LCEN with its ablated variants.
    Ablate {
        data: PathBuf,
        /// Sidecar JSON with the true model, adds a coefficient-error column.
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
        /// Leave out the runtime column so tables compare byte for byte.
        #[arg(long)]
        no_timing: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Variance inflation factors of the feature columns.
    Vif {
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct GenArgs {
    /// linear5, multicollinear, relativistic, quartic or kepler.
    generator: String,
    /// CSV path; quartic writes `<stem>_train.csv` and `<stem>_test.csv`.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    /// Noise standard deviation in percent of the signal's.
    #[arg(long)]
    noise: Option<f64>,
    /// Absolute noise variance (quartic).
    #[arg(long = "noise-variance")]
    noise_variance: Option<f64>,
    /// 10 or 100 (relativistic).
    #[arg(long = "mass-max")]
    mass_max: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long = "n-train")]
    n_train: Option<usize>,
    #[arg(long = "n-test")]
    n_test: Option<usize>,
    /// modern or original1619 (kepler).
    #[arg(long = "kepler-version")]
    kepler_version: Option<String>,
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let flags: [(&str, Option<String>); 6] = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("pipeline", common.pipeline.clone()),
        ("degrees", common.degree_list.clone()),
        ("lags", common.lag.clone()),
        ("cutoff", common.cutoff.map(|v| v.to_string())),
        ("target", common.target.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    match command {
        Command::Gen(g) => {
            let flags: [(&str, Option<String>); 9] = [
                ("n", g.n.map(|v| v.to_string())),
                ("noise", g.noise.map(|v| v.to_string())),
                ("noise_variance", g.noise_variance.map(|v| v.to_string())),
                ("mass_max", g.mass_max.map(|v| v.to_string())),
                ("eps1", g.eps1.map(|v| v.to_string())),
                ("eps2", g.eps2.map(|v| v.to_string())),
                ("n_train", g.n_train.map(|v| v.to_string())),
                ("n_test", g.n_test.map(|v| v.to_string())),
                ("kepler_version", g.kepler_version.clone()),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    cfg.set(k, v)?;
                }
            }
        }
        Command::Forecast { horizon: Some(h), .. } => cfg.set("horizon", h)?,
        Command::Sweep { cutoffs: Some(c), .. } => cfg.set("cutoffs", c)?,
        _ => {}
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("LCEN_NUM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("LCEN_NUM_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = resolve(&cli.common, &cli.command)?;
    match cli.command {
        Command::Gen(g) => commands::gen(&cfg, &g.generator, &g.out),
        Command::Fit { data, out, cv_out } => commands::fit(&cfg, &data, out.as_deref(), cv_out.as_deref()),
        Command::Predict { model, data, out } => commands::predict(&cfg, &model, &data, out.as_deref()),
        Command::Forecast {
            model,
            history,
            future,
            out,
            ..
        } => commands::forecast(&cfg, &model, &history, future.as_deref(), out.as_deref()),
        Command::Sweep { data, test, out, .. } => commands::sweep(&cfg, &data, test.as_deref(), out.as_deref()),
        Command::Ablate {
            data,
            truth,
            no_timing,
            out,
        } => commands::ablate(&cfg, &data, truth.as_deref(), !no_timing, out.as_deref()),
        Command::Vif { data, out } => commands::vif(&cfg, &data, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
