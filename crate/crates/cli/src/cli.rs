//! Argument definitions and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fairmaml::boundary::GridSpec;
use fairmaml::synth::PhiInterpretation;
use fairmaml::Regularizer;

use crate::commands;
use crate::config::{ExperimentKind, Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fairmaml", version, about = "Fair meta-learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic two-Gaussian experiment.
    Synth(Common),
    /// Communities and Crime experiment.
    Cc(Common),
    /// Export the decision-boundary grid of a saved 2-D model.
    Boundary(BoundaryArgs),
    /// Write the task pool of an experiment without training.
    CacheTasks(CacheArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; a previous run's manifest.json works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run a single fairness weight instead of the configured grid.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// `dp` or `eop`.
    #[arg(long)]
    pub regularizer: Option<Regularizer>,
    #[arg(long)]
    pub meta_iters: Option<usize>,
    /// Communities and Crime data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parent directory for outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `literal` or `pi-over-phi`.
    #[arg(long)]
    pub phi_interpretation: Option<PhiInterpretation>,
    /// Seed of the holdout state draw.
    #[arg(long)]
    pub holdout_seed: Option<u64>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            gamma: self.gamma,
            regularizer: self.regularizer,
            meta_iters: self.meta_iters,
            data: self.data.clone(),
            out: self.out.clone(),
            phi_interpretation: self.phi_interpretation,
            holdout_seed: self.holdout_seed,
        }
    }

    fn resolve(&self, kind: ExperimentKind) -> Result<RunConfig, CliError> {
        RunConfig::resolve(kind, self.config.as_deref(), &self.overrides())
    }
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    /// Model parameters as written to `models/*.json`.
    #[arg(long)]
    pub model: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Points per axis.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    /// Grid covers `[-bound, bound]` on both axes.
    #[arg(long, default_value_t = 10.0)]
    pub bound: f64,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// `synth` or `cc`.
    #[arg(long, value_parser = parse_kind)]
    pub kind: ExperimentKind,
    /// Number of synthetic tasks.
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    match s {
        "synth" => Ok(ExperimentKind::Synth),
        "cc" => Ok(ExperimentKind::Cc),
        _ => Err(format!("unknown experiment `{s}`; expected synth or cc")),
    }
}

/// Runs a parsed command and returns the text to print.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(c) => commands::cmd_synth(&c.resolve(ExperimentKind::Synth)?).map(|(_, t)| t),
        Command::Cc(c) => commands::cmd_cc(&c.resolve(ExperimentKind::Cc)?).map(|(_, t)| t),
        Command::Boundary(b) => {
            let grid = GridSpec {
                x_min: -b.bound,
                x_max: b.bound,
                y_min: -b.bound,
                y_max: b.bound,
                resolution: b.resolution,
            };
            grid.validate()?;
            commands::cmd_boundary(&b.model, &grid, &b.out)
        }
        Command::CacheTasks(a) => {
            let mut cfg = a.common.resolve(a.kind)?;
            if let Some(n) = a.count {
                cfg.synth.task_count = n;
                cfg.validate(a.kind)?;
            }
            commands::cmd_cache_tasks(a.kind, &cfg)
        }
    }
}
