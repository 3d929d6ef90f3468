//! Command-line pipeline: simulate, train, reconstruct, enhance, report.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration error,
//! 3 missing prerequisite stage, 4 unknown run.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    MissingStage(String),
    #[error("unknown run: {0}")]
    UnknownRun(String),
    #[error("{0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] erecon_core::CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingStage(_) => 3,
            CliError::UnknownRun(_) => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "erecon", version, about = "Latent-manifold reconstruction of transient simulation frames")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `<output_dir>/<run id>`.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// 64-bit deterministic mode.
    #[arg(long = "f64", global = true)]
    pub f64_mode: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the impact simulation and write training frames.
    Simulate,
    /// Train the autoencoder on the simulated frames.
    Train {
        /// Train a plain VAE without the critic.
        #[arg(long)]
        no_adversarial: bool,
    },
    /// Extract, densify and decode the latent trajectory.
    Reconstruct,
    /// Train the enhancement GAN and sharpen the decoded frames.
    Enhance,
    /// Summarize a run.
    Report {
        /// Run id under the configured output directory.
        run_id: Option<String>,
    },
}

pub fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.f64_mode {
        cfg.f64 = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(cli: &Cli, cfg: &PipelineConfig) -> PathBuf {
    cli.run_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(pipeline::run_id(cfg)))
}

/// Execute one command; returns the line printed on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    if let Command::Report { run_id } = &cli.command {
        let dir = match (run_id, &cli.run_dir) {
            (Some(id), _) => cfg.output_dir.join(id),
            (None, Some(d)) => d.clone(),
            (None, None) => run_dir(cli, &cfg),
        };
        if !dir.is_dir() {
            return Err(CliError::UnknownRun(format!("{} does not exist", dir.display())));
        }
        let text = pipeline::report(&dir)?;
        let path = dir.join("report.txt");
        std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
        return Ok(text);
    }
    let dir = run_dir(cli, &cfg);
    let mut run = pipeline::Run::open(&dir, cfg)?;
    match &cli.command {
        Command::Simulate => pipeline::simulate(&mut run),
        Command::Train { no_adversarial } => pipeline::train(&mut run, !no_adversarial),
        Command::Reconstruct => pipeline::reconstruct(&mut run),
        Command::Enhance => pipeline::enhance(&mut run),
        Command::Report { .. } => unreachable!("handled above"),
    }
}
