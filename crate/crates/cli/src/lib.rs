//! Command-line front end: parses a JSON run configuration, dispatches to
//! the computation modules, and emits CSV/JSON artifacts with provenance
//! sidecars.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numerical or I/O
//! failure during a run. `RISK_THREADS` caps the worker pool.

use clap::{Args, Parser, Subcommand};

pub mod cmd;
pub mod output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<poolrisk_core::Error> for CliError {
    fn from(e: poolrisk_core::Error) -> Self {
        match e {
            poolrisk_core::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<poolrisk_core::config::ConfigError> for CliError {
    fn from(e: poolrisk_core::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "poolrisk",
    version,
    about = "Default-clustering analytics for large pools of interacting intensities",
    long_about = "Simulates pools of names whose default intensities mean-revert, diffuse, \
jump at pool defaults (contagion) and co-move with a systematic factor; approximates the \
loss distribution by large-pool and Gaussian-correction limits; computes large-deviations \
rate functions and most-likely failure paths; and estimates tail probabilities by \
importance sampling. All runs are reproducible: outputs depend only on the configuration \
and the command line, never on scheduling."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact Monte Carlo of the pool; emits terminal losses or full loss paths.
    Simulate(SimulateArgs),
    /// Survival function and default density per group (zero forcing).
    Survival(SurvivalArgs),
    /// Large-pool (first-order) loss: deterministic trajectory or
    /// conditional-on-factor samples.
    Lln(LlnArgs),
    /// Second-order (Gaussian-correction) loss samples and risk measures.
    Clt(CltArgs),
    /// Large-deviations rate function and most-likely failure paths.
    Ldp(LdpArgs),
    /// Importance-sampling estimators for tail probabilities.
    Is(IsArgs),
    /// Side-by-side VaR/ES from exact simulation and both approximations.
    ///
    /// VaR is the inverse-CDF empirical quantile with linear interpolation
    /// between order statistics; ES is the mean of samples at or above VaR.
    Var(VarArgs),
    /// End-to-end reproduction of the three-type test-portfolio study:
    /// typical losses with and without contagion, rate-function curves for
    /// both cases, and the extremal paths at ℓ = 0.81.
    #[command(name = "reproduce-table1")]
    ReproduceTable1(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: String,
    /// Number of independent paths.
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Run index within the seed's stream space.
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    /// What to emit: one row per path (terminal) or per (path, grid time).
    #[arg(long, value_parser = ["terminal", "full"], default_value = "terminal")]
    pub emit: String,
    /// Output CSV.
    #[arg(long)]
    pub out: String,
    /// Also emit a gnuplot script next to the CSV.
    #[arg(long, default_value_t = false)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct SurvivalArgs {
    #[arg(long)]
    pub config: String,
    /// Truncation order of the exponential-moment system.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    #[arg(long)]
    pub out: String,
    #[arg(long, default_value_t = false)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct LlnArgs {
    #[arg(long)]
    pub config: String,
    /// Truncation order of the moment system.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    /// Factor paths to sample (only used when the factor coupling is active).
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    /// Output CSV: (t, loss) when deterministic, (path, terminal_loss)
    /// otherwise. A JSON summary with mean and quantiles is written next to
    /// it as `<out>.summary.json`.
    #[arg(long)]
    pub out: String,
    #[arg(long, default_value_t = false)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    #[arg(long)]
    pub config: String,
    /// Truncation order of the fluctuation system.
    #[arg(long, default_value_t = 4)]
    pub kf: usize,
    /// Pool size N entering the 1/√N correction (defaults to the config's).
    #[arg(long)]
    pub n_names: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    /// Confidence levels for the VaR/ES report (repeatable).
    #[arg(long = "level", default_values_t = vec![0.95, 0.99])]
    pub levels: Vec<f64>,
    /// Output CSV of per-path samples; the VaR/ES report goes to
    /// `<out>.report.json`.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct LdpArgs {
    #[arg(long)]
    pub config: String,
    /// Target loss fraction for the extremal-path solve.
    #[arg(long)]
    pub ell: Option<f64>,
    /// Scale constant c = lim N·ε_N². Default: N·ε² from the config
    /// (infinite, i.e. factor cost off, when ε = 0).
    #[arg(long)]
    pub c: Option<f64>,
    /// Path-discretization steps for the variational problem.
    #[arg(long, default_value_t = 100)]
    pub path_steps: usize,
    /// Truncation order of the forced moment systems.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    /// Rate-curve request `lo:hi:points` (inclusive linspace of ℓ values).
    #[arg(long)]
    pub curve: Option<String>,
    /// Output CSV of extremal paths (requires --ell); the solve report goes
    /// to `<out>.report.json`.
    #[arg(long)]
    pub out: String,
    /// Output CSV for the rate curve (requires --curve).
    #[arg(long)]
    pub curve_out: Option<String>,
    #[arg(long, default_value_t = false)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct IsArgs {
    #[arg(long)]
    pub config: String,
    /// Target loss fraction.
    #[arg(long)]
    pub ell: f64,
    /// Estimator family.
    #[arg(long, value_parser = ["independent", "heterogeneous", "dependent"])]
    pub mode: String,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Pool size override for the independent estimator.
    #[arg(long)]
    pub n_names: Option<usize>,
    /// Explicit tilt θ (independent mode); default is the optimal θ*.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Superimposed default rate β (dependent mode).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Pilot grid of β values, comma-separated (dependent mode); the main
    /// run uses the pilot-selected argmin.
    #[arg(long)]
    pub beta_grid: Option<String>,
    /// Pilot samples per grid point.
    #[arg(long, default_value_t = 2000)]
    pub pilot: usize,
    /// Truncation order for per-name default probabilities.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    /// Output JSON report.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct VarArgs {
    #[arg(long)]
    pub config: String,
    /// Confidence levels (repeatable).
    #[arg(long = "level", default_values_t = vec![0.95, 0.99])]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    /// Fluctuation truncation for the second-order column.
    #[arg(long, default_value_t = 4)]
    pub kf: usize,
    /// Moment truncation for the first-order column.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Directory for the report and CSV artifacts.
    #[arg(long)]
    pub out_dir: String,
    /// Points on each rate curve.
    #[arg(long, default_value_t = 8)]
    pub ell_points: usize,
    /// Exact-simulation paths for the cross-check at N = 200.
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    /// Path-discretization steps for the variational problems.
    #[arg(long, default_value_t = 100)]
    pub path_steps: usize,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn init_thread_pool() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        if let Ok(value) = std::env::var("RISK_THREADS") {
            if let Ok(n) = value.parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Parses `argv` and runs the requested subcommand. Returns the process exit
/// code (0 success, 2 config/usage error, 3 numerical/output failure).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_thread_pool();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage; exit code 2 for usage errors,
            // 0 for --help/--version.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd::simulate(&args),
        Command::Survival(args) => cmd::survival(&args),
        Command::Lln(args) => cmd::lln(&args),
        Command::Clt(args) => cmd::clt(&args),
        Command::Ldp(args) => cmd::ldp(&args),
        Command::Is(args) => cmd::importance(&args),
        Command::Var(args) => cmd::var(&args),
        Command::ReproduceTable1(args) => cmd::reproduce_table1(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
