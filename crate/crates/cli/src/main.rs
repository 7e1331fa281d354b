use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radpose::config::Config;
use radpose::pipeline::{self, CALIBRATION_FILE, MODEL_FILE, PREDICTIONS_FILE};
use radpose::{Error, Result};

/// Radar pose estimation with calibrated uncertainty.
#[derive(Parser)]
#[command(name = "radpose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value config file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long)]
    out: PathBuf,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// overrides the subject split, e.g. "train=0,1,2;calib=3;test=4"
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate recordings as RPC1 cubes and pose CSVs
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Cache processed windows of a recording directory
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model on the training subjects
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// retrain on training and calibration subjects for the selected epoch count
        #[arg(long)]
        refit: bool,
    },
    /// Predictive distributions for the calibration and test subjects
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// model checkpoint, or a train output directory
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fit isotonic recalibration on the calibration predictions
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// predictions file, or an evaluate output directory
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Error, uncertainty and calibration tables for the test predictions
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// calibration file, or a calibrate output directory
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Activity classification with and without latent augmentation
    AugmentClassify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(split) = &common.split {
        cfg.set("split", split)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

fn file_in(path: &Path, name: &str) -> Result<PathBuf> {
    let path = existing(path)?;
    let file = if path.is_dir() { path.join(name) } else { path.to_path_buf() };
    existing(&file)?;
    Ok(file)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => pipeline::simulate(&config(&common)?, &common.out),
        Command::Preprocess { common, data } => {
            pipeline::preprocess(&config(&common)?, existing(&data)?, &common.out)
        }
        Command::Train { common, data, refit } => {
            let s = pipeline::train_stage(&config(&common)?, existing(&data)?, &common.out, refit)?;
            println!("best epoch {} of {}", s.best_epoch, s.epochs_run);
            Ok(())
        }
        Command::Evaluate { common, data, checkpoint } => {
            let ckpt = file_in(&checkpoint, MODEL_FILE)?;
            pipeline::evaluate_stage(&config(&common)?, existing(&data)?, &ckpt, &common.out).map(|_| ())
        }
        Command::Calibrate { common, predictions } => {
            let preds = file_in(&predictions, PREDICTIONS_FILE)?;
            pipeline::calibrate_stage(&config(&common)?, &preds, &common.out).map(|_| ())
        }
        Command::Report { common, predictions, calibration } => {
            let preds = file_in(&predictions, PREDICTIONS_FILE)?;
            let calib = file_in(&calibration, CALIBRATION_FILE)?;
            let r = pipeline::report_stage(&preds, &calib, &common.out)?;
            println!(
                "MPJPE {:.2} cm, ECE {:.4} -> {:.4}",
                r.overall.mpjpe_cm, r.ece_uncalibrated, r.ece_calibrated
            );
            Ok(())
        }
        Command::AugmentClassify { common, data, checkpoint } => {
            let ckpt = file_in(&checkpoint, MODEL_FILE)?;
            let c = pipeline::augment_classify_stage(&config(&common)?, existing(&data)?, &ckpt, &common.out)?;
            println!(
                "macro-F1 {:.3} (mean only) vs {:.3} (augmented)",
                c.mean_only.macro_f1, c.augmented.macro_f1
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("radpose: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
