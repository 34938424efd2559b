//! `ribfrac`: rib fracture post-processing, training and scoring.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, PipelineConfig};
use run::Failure;

#[derive(Parser)]
#[command(name = "ribfrac", version, about = "Rib fracture tracking, classification and scoring")]
struct Cli {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the reference mode.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    iou_min: Option<f64>,
    #[arg(long, global = true)]
    center_max_mm: Option<f64>,
    #[arg(long, global = true)]
    conf_min: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check annotation worksheets against the schema.
    Validate { worksheets: Vec<PathBuf> },
    /// Link per-slice detections into tracks; with volumes, cut patches and assign ribs.
    Track {
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Directory of `<scan>.json` / `<scan>.raw` / `<scan>.mask.raw`.
        #[arg(long)]
        volumes: Option<PathBuf>,
    },
    /// Generate text descriptions from worksheet labels.
    Describe { worksheets: Vec<PathBuf> },
    /// Train projection and classification heads on a feature dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Predict head labels with consensus.
    Infer {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predictions against dataset labels.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Dataset name printed in the report.
        #[arg(long)]
        name: Option<String>,
    },
    /// RibScore per worksheet.
    Ribscore { worksheets: Vec<PathBuf> },
    /// Write synthetic detections, dataset, worksheets and volumes.
    Synth,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        iou_min: cli.iou_min,
        center_max_mm: cli.center_max_mm,
        conf_min: cli.conf_min,
        out: cli.out,
    };
    let cfg = PipelineConfig::load(cli.config.as_deref())
        .and_then(|c| c.resolve(&overrides))
        .map_err(Failure::Config)?;
    match cli.command {
        Command::Validate { worksheets } => commands::validate(&cfg, worksheets),
        Command::Track { detections, volumes } => commands::track(&cfg, detections, volumes),
        Command::Describe { worksheets } => commands::describe(&cfg, worksheets),
        Command::Train { dataset } => commands::train_cmd(&cfg, dataset),
        Command::Infer { dataset, checkpoint } => commands::infer(&cfg, dataset, checkpoint),
        Command::Eval { dataset, predictions, name } => commands::eval(&cfg, dataset, predictions, name),
        Command::Ribscore { worksheets } => commands::ribscore(&cfg, worksheets),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{}", serde_json::json!({ "error": "config", "message": msg }));
            ExitCode::from(2)
        }
        Err(Failure::Module(e)) => {
            eprintln!("{}", serde_json::json!({ "error": "module", "message": format!("{e:#}") }));
            ExitCode::from(1)
        }
    }
}
