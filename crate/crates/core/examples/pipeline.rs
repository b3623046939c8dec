//! The whole curation pipeline on a generated corpus: ingest, format,
//! dedup, foodness, calibration with a few scripted decisions, export.
//!
//! cargo run --example pipeline [workdir]

use std::fs;
use std::path::PathBuf;

use foodcurate::manifest::{load_manifest, verify_accounting, Stage};
use foodcurate::pipeline::{
    run_pending, run_stage, Action, CalibrationDecision, CalibrationSession, FoodnessConfig, PipelineConfig,
    QueueFilter,
};
use foodcurate::synth::{write_corpus, CorpusPlan};

fn main() -> foodcurate::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("foodcurate-pipeline"));
    let _ = fs::remove_dir_all(&work);
    let cfg = PipelineConfig {
        dataset_name: "demo".into(),
        categories: write_corpus(&work.join("raw"), &CorpusPlan::default())?,
        foodness: Some(FoodnessConfig {
            scorer: work.join("scores.csv"),
            accept: 0.5,
        }),
        formatted_dir: work.join("formatted"),
        export_dir: work.join("out"),
        export_floor: 8,
        ..PipelineConfig::default()
    };
    let manifest = work.join("manifest.jsonl");
    run_stage(&cfg, Stage::Ingest, &manifest, false)?;

    // Stand-in for an external classifier: noise files score low.
    let mut csv = String::from("image_id,score\n");
    for r in &load_manifest(&manifest)?.records {
        let name = r.source_path.file_name().unwrap_or_default().to_string_lossy();
        csv.push_str(&format!("{},{}\n", r.id, if name.starts_with("nonfood") { 0.05 } else { 0.8 }));
    }
    fs::write(work.join("scores.csv"), csv).map_err(|e| foodcurate::Error::io(work.join("scores.csv"), e))?;
    run_pending(&cfg, &manifest, Stage::Foodness)?;

    let mut session = CalibrationSession::open(&manifest)?;
    let queue = session.state().queue(QueueFilter { limit: Some(3), ..QueueFilter::default() });
    let actions = [
        Action::Confirm,
        Action::Reassign { category_id: 2 },
        Action::Remove { reason: "wrong_category".into() },
    ];
    for (item, action) in queue.iter().zip(actions) {
        println!("{} ({}) -> {action:?}", item.image_id, item.category);
        session.decide(CalibrationDecision::new(item.image_id.clone(), action))?;
    }
    run_pending(&cfg, &manifest, Stage::Export)?;

    let m = load_manifest(&manifest)?;
    for r in &m.history {
        println!("{:<10} in {:>3} kept {:>3} {:?}", r.stage, r.input_count, r.kept_count, r.reasons);
    }
    println!("accounting violations: {}", verify_accounting(&m).len());
    println!("{}", fs::read_to_string(cfg.export_dir.join("summary.json")).unwrap_or_default());
    Ok(())
}
