//! Dataset curation CLI: one subcommand per pipeline stage.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use foodcurate::diversity::{dataset_report, DiversityOptions, Embedder, Metric, DEFAULT_SAMPLE_CAP};
use foodcurate::foodness::{evaluate, extract_features, read_labels_csv, train_baseline, FoodnessScorer};
use foodcurate::imaging::load_image;
use foodcurate::manifest::{load_manifest, verify_accounting, Stage, StageReport};
use foodcurate::pipeline::{run_pending, run_stage, server, CalibrationSession, FoodnessConfig, PipelineConfig};
use foodcurate::scl::Stage1Model;
use foodcurate::checkpoint::Checkpoint;
use foodcurate::{Error, Result};

#[derive(Parser)]
#[command(name = "curate", about = "Curate a food-image dataset stage by stage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Pipeline config (JSON).
    #[arg(long, default_value = "curate.json")]
    config: PathBuf,
    /// Rerun a stage that already ran, from its saved input.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Index every file under the category roots.
    Ingest(StageArgs),
    /// Decode, drop broken or tiny files, write JPEG copies.
    Format(StageArgs),
    /// Remove exact and near duplicates within each category.
    Dedup {
        #[command(flatten)]
        stage: StageArgs,
        /// Max Hamming distance over the 192 hash bits.
        #[arg(long)]
        threshold: Option<u32>,
        /// Only identical hashes count as duplicates.
        #[arg(long, conflicts_with = "threshold")]
        exact: bool,
    },
    /// Score foodness and drop images below the accept threshold.
    Foodness {
        #[command(flatten)]
        stage: StageArgs,
        /// Baseline checkpoint or scores CSV.
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[arg(long)]
        accept: Option<f64>,
        /// Human labels CSV (image_id,is_food) to evaluate the stored scores against.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Serve the review API, or without --serve fold the decision log into the manifest.
    Calibrate {
        #[command(flatten)]
        stage: StageArgs,
        /// Port to serve on; defaults to the config's calibration port.
        #[arg(long, num_args = 0..=1)]
        serve: Option<Option<u16>>,
    },
    /// Copy active images to <out>/<category>/<id>.jpg with a summary.
    Export {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        floor: Option<u64>,
    },
    /// Run every pending stage in order, resuming after the last completed one.
    Run {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, default_value = "export")]
        until: Stage,
    },
    /// Per-category diversity report.
    Diversity {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "both")]
        metric: Metric,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_CAP)]
        sample_cap: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Stage-1 checkpoint whose encoder provides embeddings.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the baseline foodness scorer on labelled manifest images.
    TrainScorer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check stage reports for conservation and chaining.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn print_report(r: &StageReport) -> Result<()> {
    println!("{}", serde_json::to_string(r)?);
    Ok(())
}

fn stage(args: &StageArgs, s: Stage, cfg: &PipelineConfig) -> Result<()> {
    print_report(&run_stage(cfg, s, &args.manifest, args.force)?)
}

fn config(args: &StageArgs) -> Result<PipelineConfig> {
    PipelineConfig::load(&args.config)
}

fn serve(manifest: &Path, port: u16) -> Result<()> {
    let session = Arc::new(Mutex::new(CalibrationSession::open(manifest)?));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(server::serve(session, SocketAddr::from((Ipv4Addr::LOCALHOST, port))))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => stage(&a, Stage::Ingest, &config(&a)?),
        Command::Format(a) => stage(&a, Stage::Format, &config(&a)?),
        Command::Dedup { stage: a, threshold, exact } => {
            let mut cfg = config(&a)?;
            if exact {
                cfg.dedup_threshold = 0;
            } else if let Some(t) = threshold {
                cfg.dedup_threshold = t;
            }
            cfg.validate()?;
            stage(&a, Stage::Dedup, &cfg)
        }
        Command::Foodness { stage: a, scorer, accept, eval } => {
            let mut cfg = config(&a)?;
            if let Some(path) = scorer {
                let accept = cfg.foodness.as_ref().map_or(foodcurate::foodness::DEFAULT_ACCEPT, |f| f.accept);
                cfg.foodness = Some(FoodnessConfig { scorer: path, accept });
            }
            if let (Some(t), Some(f)) = (accept, cfg.foodness.as_mut()) {
                f.accept = t;
            }
            cfg.validate()?;
            stage(&a, Stage::Foodness, &cfg)?;
            if let Some(labels) = eval {
                let m = load_manifest(&a.manifest)?;
                let threshold = cfg.foodness.as_ref().map_or(0.5, |f| f.accept);
                let result = evaluate(&read_labels_csv(&labels)?, threshold, |id| {
                    m.record(id)
                        .ok_or_else(|| Error::UnknownImage(id.to_string()))?
                        .foodness_score
                        .ok_or_else(|| Error::invalid(format!("{id} was not scored")))
                })?;
                println!("{}", serde_json::to_string(&result)?);
            }
            Ok(())
        }
        Command::Calibrate { stage: a, serve: port } => match port {
            Some(port) => {
                let port = match port {
                    Some(p) => p,
                    None => config(&a)?.calibration_port,
                };
                serve(&a.manifest, port)
            }
            None => stage(&a, Stage::Calibrate, &config(&a)?),
        },
        Command::Export { stage: a, out, floor } => {
            let mut cfg = config(&a)?;
            if let Some(o) = out {
                cfg.export_dir = o;
            }
            if let Some(f) = floor {
                cfg.export_floor = f;
            }
            stage(&a, Stage::Export, &cfg)
        }
        Command::Run { stage: a, until } => {
            for r in run_pending(&config(&a)?, &a.manifest, until)? {
                print_report(&r)?;
            }
            Ok(())
        }
        Command::Diversity { manifest, metric, sample_cap, seed, encoder, out } => {
            let m = load_manifest(&manifest)?;
            let model = encoder
                .map(|p| Checkpoint::load(&p).and_then(|c| Stage1Model::from_checkpoint(&c)))
                .transpose()?;
            let embedder = model.as_ref().map(|m| &m.encoder as &dyn Embedder);
            let opts = DiversityOptions { metric, sample_cap, seed };
            let report = dataset_report(&m, |r| load_image(r.pixel_path()), embedder, &opts)?;
            let text = serde_json::to_string_pretty(&report)?;
            foodcurate::fsutil::write_atomic(&out, text.as_bytes())?;
            println!("{text}");
            Ok(())
        }
        Command::TrainScorer { manifest, labels, epochs, lr, out } => {
            let m = load_manifest(&manifest)?;
            let labeled = read_labels_csv(&labels)?
                .iter()
                .map(|l| {
                    let r = m.record(&l.image_id).ok_or_else(|| Error::UnknownImage(l.image_id.clone()))?;
                    Ok((extract_features(&load_image(r.pixel_path())?), l.is_food))
                })
                .collect::<Result<Vec<_>>>()?;
            let scorer: FoodnessScorer = train_baseline(&labeled, epochs, lr)?;
            scorer.save(&out)
        }
        Command::Verify { manifest } => {
            let m = load_manifest(&manifest)?;
            let violations = verify_accounting(&m);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("ok: {} stage reports balance", m.history.len());
                Ok(())
            } else {
                Err(Error::invalid(format!("{} accounting violations", violations.len())))
            }
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
