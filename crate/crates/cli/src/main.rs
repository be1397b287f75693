//! `netrca`: synthesize scenarios, fit invariant models, detect anomalies,
//! rank root causes and run benchmarks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invalid scenario
//! spec, 3 no invariants found, 4 model/panel channel mismatch, 5 missing or
//! unreadable input, 6 every benchmark scenario failed.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netrca::rca::Method;
use netrca::RcaError;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "netrca", version, about = "Root-cause analysis for multivariate KPI time series")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true, env = "NETRCA_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `paths.out_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `pipeline.top_n`.
    #[arg(long, global = true)]
    pub top_n: Option<usize>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario: panel CSV plus ground-truth JSON.
    Synth {
        /// Scenario spec (JSON or TOML) instead of a random draw.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Fit the invariant graph on the training rows of a panel.
    Fit {
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Scan the rows after training for anomaly events.
    Detect {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sliding-window length; overrides `detect.window`.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Rank the root causes of one event.
    Rca {
        #[arg(long)]
        event: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Run the benchmark suite and score every method.
    Bench {
        /// Comma-separated subset of tcorca, threshold, ig, lbp-ig.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<Method>>,
        /// Also run the anomaly-count sweep and write plot series.
        #[arg(long)]
        plot_data: bool,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: RcaError| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Output(String),
    Missing(String),
    Rca(RcaError),
    AllScenariosFailed(usize),
}

impl CliError {
    pub fn missing(path: &Path, e: std::io::Error) -> Self {
        CliError::Missing(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Missing(_) => 5,
            CliError::AllScenariosFailed(_) => 6,
            CliError::Rca(e) => match e {
                RcaError::InvalidSpec(_) => 2,
                RcaError::NoInvariantsFound(_) => 3,
                RcaError::ChannelMismatch(_) => 4,
                RcaError::Io(_) => 5,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Output(m) => write!(f, "cannot write output: {m}"),
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Rca(e) => write!(f, "{e}"),
            CliError::AllScenariosFailed(n) => write!(f, "all {n} benchmark scenarios failed"),
        }
    }
}

impl From<RcaError> for CliError {
    fn from(e: RcaError) -> Self {
        CliError::Rca(e)
    }
}

fn effective_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(dir) = &global.out_dir {
        config.paths.out_dir = dir.clone();
    }
    if let Some(n) = global.top_n {
        config.pipeline.top_n = n;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = effective_config(&cli.global)?;
    match &cli.command {
        Command::Synth { spec } => config.paths.spec = spec.clone().or(config.paths.spec),
        Command::Fit { panel } => config.paths.panel = panel.clone().or(config.paths.panel),
        Command::Detect { panel, model, window } => {
            config.paths.panel = panel.clone().or(config.paths.panel);
            config.paths.model = model.clone().or(config.paths.model);
            config.detect.window = window.unwrap_or(config.detect.window);
        }
        Command::Rca { event, model, panel, method } => {
            config.paths.event = event.clone().or(config.paths.event);
            config.paths.model = model.clone().or(config.paths.model);
            config.paths.panel = panel.clone().or(config.paths.panel);
            config.rca.method = method.unwrap_or(config.rca.method);
        }
        Command::Bench { methods, .. } => {
            if let Some(m) = methods {
                config.bench.methods = m.clone();
            }
        }
    }
    if cli.global.dump_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::Synth { .. } => commands::synth(&config, cli.global.seed),
        Command::Fit { .. } => commands::fit(&config),
        Command::Detect { .. } => commands::detect(&config),
        Command::Rca { .. } => commands::rca(&config),
        Command::Bench { plot_data, .. } => commands::bench(&config, plot_data),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NETRCA_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netrca: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
