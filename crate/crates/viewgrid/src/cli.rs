//! The `viewgrid` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use viewgrid_core::registry::{self, DEFAULT_STEP, DEFAULT_TOL};
use viewgrid_core::synthdata::{generate_dataset, Dataset};
use viewgrid_core::trainer::{evaluate_all, train_on};
use viewgrid_core::Error as CoreError;

use crate::ablate::{self, Grid};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset_io::{read_dataset, write_dataset};
use crate::report::{self, EvalReport, MetricsReport, Timing};

#[derive(Debug, Parser)]
#[command(name = "viewgrid", version, about = "View-invariant clip classification experiments")]
pub struct Cli {
    /// JSON config file layered over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `model.num_cameras=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Train a network and write its checkpoint and metrics.
    Train,
    /// Evaluate a checkpoint on every split.
    Eval {
        /// Defaults to `<out>/checkpoint.vgrd`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of an ablation grid.
    Ablate {
        #[arg(long, value_enum, default_value = "all")]
        grid: Grid,
    },
    /// Check every differentiable operation against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true, value_name = "OP")]
        corrupt: Option<String>,
    },
    /// Write the learned cameras of a checkpoint as CSV.
    ExportCameras {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
}

/// Failure of a command; configuration and usage problems exit 2, everything else 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn from_core(e: CoreError) -> CliError {
    match e {
        CoreError::Invalid(_) | CoreError::EmptySplit(_) | CoreError::LabelOutOfRange { .. } => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
            }
            let ds = read_dataset(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            if ds.config.num_classes != cfg.model.classes {
                return Err(CliError::Config(format!(
                    "dataset has {} classes but model.classes is {}",
                    ds.config.num_classes, cfg.model.classes
                )));
            }
            Ok(ds)
        }
        None => generate_dataset(&cfg.synthdata).map_err(from_core),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = || RunConfig::load(cli.config.as_deref(), &cli.overrides).map_err(|e| CliError::Config(e.0));
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen => {
            let cfg = cfg()?;
            let ds = generate_dataset(&cfg.synthdata).map_err(from_core)?;
            create_out(out)?;
            write_dataset(&ds, &out.join("dataset.jsonl")).map_err(runtime)?;
            report::write_json(&out.join("config.json"), &cfg).map_err(runtime)?;
            println!("wrote {} samples to {}", ds.samples.len(), out.join("dataset.jsonl").display());
        }
        Command::Train => {
            let cfg = cfg()?;
            let ds = load_dataset(&cfg)?;
            create_out(out)?;
            let start = Instant::now();
            let (net, metrics) = train_on(&cfg.experiment(), &ds, |e, l| {
                eprintln!(
                    "epoch {:>3} loss={:.4} ce={:.4} 3d={:.4} cam_reg={:.4}",
                    e + 1,
                    l.loss,
                    l.cross_entropy,
                    l.three_d,
                    l.cam_reg
                )
            })
            .map_err(from_core)?;
            let elapsed = start.elapsed().as_secs_f64();
            Checkpoint::from_network(&net, cfg.to_value()).save(&out.join("checkpoint.vgrd")).map_err(runtime)?;
            report::write_json(&out.join("metrics.json"), &MetricsReport::new(&cfg, &metrics)).map_err(runtime)?;
            report::write_json(&out.join("timing.json"), &Timing { wall_clock_seconds: elapsed }).map_err(runtime)?;
            println!("{}", report::summary(&metrics.accuracy));
        }
        Command::Eval { checkpoint } => {
            let mut cfg = cfg()?;
            let path = checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.vgrd"));
            let ck = load_checkpoint(&path)?;
            let net = ck.network().map_err(runtime)?;
            cfg.model = net.config.clone();
            let ds = load_dataset(&cfg)?;
            let accuracy = evaluate_all(&net, &ds).map_err(from_core)?;
            create_out(out)?;
            report::write_json(&out.join("eval.json"), &EvalReport { config: &cfg, accuracy }).map_err(runtime)?;
            println!("{}", report::summary(&accuracy));
        }
        Command::Ablate { grid } => {
            let cfg = cfg()?;
            let ds = load_dataset(&cfg)?;
            let cells = ablate::cells(*grid, &cfg);
            for c in &cells {
                c.config.validate().map_err(|e| CliError::Config(format!("cell {}: {e}", c.name)))?;
            }
            let rows = ablate::run(&cells, &ds).map_err(from_core)?;
            create_out(out)?;
            report::write_csv(&out.join("ablation.csv"), &rows).map_err(runtime)?;
            report::write_json(&out.join("config.json"), &cfg).map_err(runtime)?;
            for r in &rows {
                println!("{:<16} seen={:.3} unseen={:.3}", r.cell, r.test_seen, r.test_unseen);
            }
        }
        Command::Gradcheck { seed, corrupt } => {
            let mut cases = registry::registry(*seed).map_err(runtime)?;
            if let Some(name) = corrupt {
                let i = cases
                    .iter()
                    .position(|c| &c.name == name)
                    .ok_or_else(|| CliError::Config(format!("no registered operation named {name}")))?;
                let case = cases.remove(i).corrupted(1.5);
                cases.insert(i, case);
            }
            let mut failed = Vec::new();
            for case in &cases {
                let report = case.check(DEFAULT_STEP, DEFAULT_TOL).map_err(runtime)?;
                let status = if report.passed() { "ok" } else { "FAIL" };
                println!("{:<32} max_rel_error={:.3e} {status}", case.name, report.max_rel_error());
                if !report.passed() {
                    failed.push(case.name.clone());
                }
            }
            println!("{} operations, {} failed", cases.len(), failed.len());
            if !failed.is_empty() {
                return Err(CliError::Runtime(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
        Command::ExportCameras { checkpoint } => {
            let ck = load_checkpoint(checkpoint)?;
            let net = ck.network().map_err(runtime)?;
            let rows = report::camera_rows(&net).map_err(runtime)?;
            if rows.is_empty() {
                return Err(CliError::Config(format!(
                    "checkpoint has no learned cameras (head={})",
                    net.config.head.as_str()
                )));
            }
            create_out(out)?;
            let path = out.join("cameras.csv");
            report::write_csv(&path, &rows).map_err(runtime)?;
            println!("wrote {} cameras to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

/// Parses the process arguments, runs, and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
