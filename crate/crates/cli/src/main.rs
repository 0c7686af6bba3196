use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gaittrack::model::{Depth, Variant};
use gaittrack::pipeline::AugmentMode;
use gaittrack::Scale;
use gaittrack_cli::{run, Command, Overrides};

/// Foot-trajectory regression from 6-axis IMU recordings.
#[derive(Parser)]
#[command(name = "gaittrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Stage,
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for every stage without a seed of its own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the stage's `paths.*` entry).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Channel scale, e.g. `1/8`.
    #[arg(long, global = true)]
    scale: Option<Scale>,
    /// `fused` or `independent`.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// `9` or `5` conv layers.
    #[arg(long, global = true)]
    depth: Option<Depth>,
    /// `none`, `sliding`, `random` or `combined`.
    #[arg(long, global = true)]
    aug: Option<AugmentMode>,
}

#[derive(Subcommand, Clone, Copy)]
enum Stage {
    /// Generate a synthetic corpus of IMU, ground-truth and step files.
    Simulate,
    /// Parse, align and segment recordings into a step store.
    Ingest,
    /// Window the steps into train/val/test datasets.
    Augment,
    /// Train a network and write its checkpoint and loss history.
    Train,
    /// Score a checkpoint on the test split.
    Eval,
    /// Subject-disjoint k-fold cross-validation.
    Crossval,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let command = match cli.command {
        Stage::Simulate => Command::Simulate,
        Stage::Ingest => Command::Ingest,
        Stage::Augment => Command::Augment,
        Stage::Train => Command::Train,
        Stage::Eval => Command::Eval,
        Stage::Crossval => Command::Crossval,
    };
    let overrides = Overrides {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        scale: cli.scale,
        variant: cli.variant,
        depth: cli.depth,
        aug: cli.aug,
    };
    match run(command, &overrides) {
        Ok((out, summary)) => {
            println!("{}", summary.trim_end());
            println!("outputs in {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
