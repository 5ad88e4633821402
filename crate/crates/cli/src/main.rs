//! `irock` command line: fit ES regressions on CSV data, run simulations,
//! tabulate asymptotic variances and run the superquantile counterexample.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irock::disparity::Tail;
use irock::load::{CovariateSpec, MissingPolicy};
use irock::tail::QuantileBackend;

use config::{OutputFormat, RunConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "IROCK_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or unknown names. Exit code 2.
    Usage(String),
    /// Data or numerical failure. Exit code 3.
    Runtime(String),
}

impl From<irock::Error> for CliError {
    fn from(e: irock::Error) -> Self {
        use irock::Error::*;
        match e {
            InvalidConfig(_) | InvalidLevel(_) | Unsupported(_) | MissingColumn(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "irock", version, about = "Expected shortfall regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit ES regressions on a CSV file.
    Fit(FitArgs),
    /// Monte Carlo comparison of estimators on a simulated model.
    Simulate(SimulateArgs),
    /// Asymptotic variances and relative efficiencies.
    Avar(AvarArgs),
    /// Superquantile regression versus i-Rock on the counterexample model.
    Counterexample(CounterexampleArgs),
}

#[derive(Args, Default)]
struct Common {
    /// TOML or JSON config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ES level τ in (0, 1).
    #[arg(long)]
    tau: Option<f64>,
    /// Grid half-width δ in (0, 1); defaults to 0.99 for discrete designs, 0.5 otherwise.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Constant in the per-covariate slice count.
    #[arg(long = "bins-constant")]
    bins_constant: Option<f64>,
    /// Number of grid intervals, overriding ⌈√(70 n ln n)⌉.
    #[arg(long = "grid-J")]
    grid_j: Option<usize>,
    /// Quantile backend: global-linear, global-bspline or bin-local-linear.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<QuantileBackend>,
    /// Master seed for sampling and bootstrap.
    #[arg(long)]
    seed: Option<u64>,
    /// Machine-readable output file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// csv (default) or jsonl.
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// CSV file with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    response: Option<String>,
    /// `name[:continuous|discrete|categorical[=baseline]]`, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_covariate)]
    covariates: Vec<CovariateSpec>,
    /// Categorical column splitting rows into groups.
    #[arg(long)]
    group: Option<String>,
    /// Baseline group for contrasts.
    #[arg(long)]
    baseline: Option<String>,
    /// Bootstrap replicates for standard errors.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// `drop` (default) or `fail` on missing or malformed cells.
    #[arg(long, value_parser = parse_missing)]
    missing: Option<MissingPolicy>,
    /// Model the lower tail `E[Y | Y ≤ q_τ]`.
    #[arg(long)]
    lower_tail: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// case51, case52, case53, counterexample, gaussian-x or correlated-x.
    spec: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct AvarArgs {
    /// Model name, as for `simulate`.
    spec: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Comma-separated variance methods.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Covariate draws when the model has no finite support.
    #[arg(long)]
    sample_size: Option<usize>,
    /// Run the random location-scale efficiency experiment with this many draws.
    #[arg(long)]
    are_draws: Option<usize>,
    /// Covariate count in the efficiency experiment.
    #[arg(long)]
    are_dim: Option<usize>,
}

#[derive(Args)]
struct CounterexampleArgs {
    #[command(flatten)]
    common: Common,
    /// Replications of the sample superquantile fit.
    #[arg(long)]
    reps: Option<usize>,
    /// Sample size of each superquantile fit.
    #[arg(long)]
    sample_n: Option<usize>,
    /// Sample size of the i-Rock fit.
    #[arg(long)]
    irock_n: Option<usize>,
}

fn parse_backend(s: &str) -> Result<QuantileBackend, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown backend '{s}'"))
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown format '{s}'"))
}

fn parse_missing(s: &str) -> Result<MissingPolicy, String> {
    s.parse().map_err(|e: irock::Error| e.to_string())
}

fn parse_covariate(s: &str) -> Result<CovariateSpec, String> {
    s.parse().map_err(|e: irock::Error| e.to_string())
}

impl Common {
    fn flags(self, command: &str) -> (Option<PathBuf>, RunConfig) {
        let c = RunConfig {
            command: Some(command.into()),
            tau: self.tau,
            delta: self.delta,
            estimators: self.estimators,
            bins_constant: self.bins_constant,
            grid_j: self.grid_j,
            backend: self.backend,
            seed: self.seed,
            output: self.output,
            format: self.format,
            ..Default::default()
        };
        (self.config, c)
    }
}

fn resolve(file: Option<PathBuf>, flags: RunConfig) -> Result<RunConfig, CliError> {
    let base = match file {
        Some(p) => RunConfig::from_file(&p)?,
        None => RunConfig::default(),
    };
    Ok(base.overlay(flags))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Fit(a) => {
            let (file, mut f) = a.common.flags("fit");
            f.input = a.input;
            f.response = a.response;
            f.covariates = a.covariates;
            f.group = a.group;
            f.baseline = a.baseline;
            f.bootstrap = a.bootstrap;
            f.missing = a.missing;
            f.tail = a.lower_tail.then_some(Tail::Lower);
            commands::fit(resolve(file, f)?)
        }
        Command::Simulate(a) => {
            let (file, mut f) = a.common.flags("simulate");
            f.spec = a.spec;
            f.n = a.n;
            f.reps = a.reps;
            commands::simulate(resolve(file, f)?)
        }
        Command::Avar(a) => {
            let (file, mut f) = a.common.flags("avar");
            f.spec = a.spec;
            f.methods = a.methods;
            f.sample_size = a.sample_size;
            f.are_draws = a.are_draws;
            f.are_dim = a.are_dim;
            commands::avar(resolve(file, f)?)
        }
        Command::Counterexample(a) => {
            let (file, mut f) = a.common.flags("counterexample");
            f.reps = a.reps;
            f.sample_n = a.sample_n;
            f.irock_n = a.irock_n;
            commands::counterexample(resolve(file, f)?)
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize =
            v.parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Usage(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| run(cli));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
