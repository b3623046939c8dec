//! Builds a small manifest up to the foodness stage and serves the review
//! API on it until ctrl-c.
//!
//! cargo run --example calibration_server [port]
//! curl 'localhost:8080/api/queue?limit=3'
//! curl -XPOST localhost:8080/api/decision -H 'content-type: application/json' \
//!      -d '{"image_id":"<id>","action":"remove","reason":"not_food"}'

use std::fs;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use foodcurate::manifest::{load_manifest, Stage};
use foodcurate::pipeline::{run_pending, run_stage, server, CalibrationSession, FoodnessConfig, PipelineConfig};
use foodcurate::synth::{write_corpus, CorpusPlan};

#[tokio::main]
async fn main() -> foodcurate::Result<()> {
    let port = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8080);
    let work = std::env::temp_dir().join("foodcurate-calibration");
    let _ = fs::remove_dir_all(&work);
    let cfg = PipelineConfig {
        categories: write_corpus(&work.join("raw"), &CorpusPlan::default())?,
        foodness: Some(FoodnessConfig {
            scorer: work.join("scores.csv"),
            accept: 0.2,
        }),
        formatted_dir: work.join("formatted"),
        export_dir: work.join("out"),
        ..PipelineConfig::default()
    };
    let manifest = work.join("manifest.jsonl");
    run_stage(&cfg, Stage::Ingest, &manifest, false)?;
    let mut csv = String::from("image_id,score\n");
    for (i, r) in load_manifest(&manifest)?.records.iter().enumerate() {
        csv.push_str(&format!("{},{:.2}\n", r.id, 0.25 + (i % 10) as f64 * 0.07));
    }
    fs::write(work.join("scores.csv"), csv).map_err(|e| foodcurate::Error::io(&work, e))?;
    run_pending(&cfg, &manifest, Stage::Foodness)?;

    let session = Arc::new(Mutex::new(CalibrationSession::open(&manifest)?));
    println!("manifest {}; decisions go to its .decisions.jsonl", manifest.display());
    server::serve(session, SocketAddr::from(([127, 0, 0, 1], port))).await
}
