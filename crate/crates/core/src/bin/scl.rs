//! Supervised contrastive training, gradient checks and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use foodcurate::checkpoint::Checkpoint;
use foodcurate::scl::gradcheck::{check_cross_entropy, check_scl};
use foodcurate::scl::train::{evaluate_topk, train_stage1_with, train_stage2, LabeledImages, Stage1Model, Stage2Model};
use foodcurate::scl::TrainConfig;
use foodcurate::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "scl", about = "Two-stage supervised contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1 trains encoder + projection; stage 2 fits a linear head on a frozen encoder.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Training config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// One subdirectory per class.
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint holding the encoder (stage 2 only).
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Top-k accuracy of a stage-2 checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        topk: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { stage, config, data, encoder, out } => {
            let cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            let data = LabeledImages::from_dir(&data, cfg.encoder.input_side)?;
            let ckpt = if stage == 1 {
                let model = train_stage1_with(&data, &cfg, |e, loss| eprintln!("epoch {e} loss {loss:.5}"))?;
                model.to_checkpoint()
            } else {
                let path = encoder.ok_or_else(|| Error::invalid("stage 2 needs --encoder"))?;
                let stage1 = Stage1Model::from_checkpoint(&Checkpoint::load(&path)?)?;
                let model = train_stage2(&stage1.encoder, &data, &cfg)?;
                eprintln!("final loss {:.5}", model.losses.last().copied().unwrap_or(f64::NAN));
                model.to_checkpoint()
            };
            ckpt.save(&out)
        }
        Command::Gradcheck { n, seed } => {
            let mut worst: f64 = 0.0;
            for (name, results) in [("scl", check_scl(n, seed)?), ("cross_entropy", check_cross_entropy(n, seed)?)] {
                for r in &results {
                    println!("{name} #{} {}x{} max_rel_error {:.3e}", r.instance, r.rows, r.cols, r.max_rel_error);
                    worst = worst.max(r.max_rel_error);
                }
            }
            println!("worst {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
            if worst < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                Err(Error::invalid("gradient check failed"))
            }
        }
        Command::Eval { model, data, topk } => {
            let model = Stage2Model::from_checkpoint(&Checkpoint::load(&model)?)?;
            let data = LabeledImages::from_dir(&data, model.encoder.input_side)?;
            for k in topk {
                if k > data.num_classes() {
                    println!("top-{k}: skipped, only {} classes", data.num_classes());
                    continue;
                }
                println!("top-{k}: {:.4}", evaluate_topk(&model, &data, k)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
