//! Config-driven runner for the regntk experiments.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Experiment, Format, RunConfig};
pub use error::{CliError, CliResult};
pub use experiments::{execute, RunOptions};

#[derive(Debug, Parser)]
#[command(
    name = "regntk",
    version,
    about = "Regularised NTK dynamics experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// NNGP and NTK Gram matrices per layer.
    Kernel,
    /// Regularised function-space gradient flow.
    Flow,
    /// Closed-form least-squares trajectory and limit.
    Lsq,
    /// Finite-width drift sweep.
    Finite,
    /// Shallow stochastic network and PAC-Bayes quantities.
    Pacbayes,
    /// Runs the experiment named in the config.
    Run,
}

#[derive(Debug, Args)]
pub struct Flags {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Omit the timestamp so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_name = "N")]
    pub quadrature_order: Option<usize>,
    /// Keep inputs as given; rejected for pacbayes.
    #[arg(long, global = true)]
    pub no_normalise: bool,
}

impl Command {
    fn experiment(&self) -> Option<Experiment> {
        match self {
            Command::Kernel => Some(Experiment::Kernel),
            Command::Flow => Some(Experiment::Flow),
            Command::Lsq => Some(Experiment::Lsq),
            Command::Finite => Some(Experiment::Finite),
            Command::Pacbayes => Some(Experiment::Pacbayes),
            Command::Run => None,
        }
    }
}

/// Loads the config, applies command-line overrides and selects the experiment.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .flags
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    match (cli.command.experiment(), config.experiment) {
        (Some(cmd), Some(cfg)) if cmd != cfg => {
            return Err(CliError::Config(format!(
                "subcommand '{cmd}' does not match experiment '{cfg}' in the config"
            )))
        }
        (Some(cmd), _) => config.experiment = Some(cmd),
        (None, None) => {
            return Err(CliError::Config(
                "'run' needs 'experiment' in the config".into(),
            ))
        }
        (None, Some(_)) => {}
    }
    if let Some(seed) = cli.flags.seed {
        config.seed = seed;
    }
    if let Some(order) = cli.flags.quadrature_order {
        config.quadrature_order = order;
    }
    if let Some(format) = cli.flags.format {
        config.format = format;
    }
    if let Some(out) = &cli.flags.out {
        config.output = Some(out.clone());
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = resolve_config(cli)?;
    let opts = RunOptions {
        no_normalise: cli.flags.no_normalise,
    };
    let table = execute(&config, opts)?;
    let header = output::Header::new(&config, cli.flags.deterministic);
    match &config.output {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            output::write(&mut w, config.format, &header, &table)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            output::write(&mut lock, config.format, &header, &table)?;
        }
    }
    Ok(())
}
