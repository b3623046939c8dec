#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use foodcurate::fsutil::{checkpoints_passed, FAULT_POINT_ENV};
use foodcurate::manifest::{load_manifest, Stage};
use foodcurate::pipeline::{clusters_path, run_pending, run_stage, FoodnessConfig, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use foodcurate::synth::{write_corpus, CorpusPlan};

/// A synthetic corpus plus a config whose paths are all relative to `root`.
pub struct Fixture {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub manifest: PathBuf,
}

impl Fixture {
    pub fn new(root: &Path, plan: &CorpusPlan) -> Fixture {
        let categories = write_corpus(&root.join("raw"), plan)
            .unwrap()
            .into_iter()
            .map(|mut c| {
                c.root = c.root.strip_prefix(root).unwrap().to_path_buf();
                c
            })
            .collect();
        let cfg = PipelineConfig {
            dataset_name: "fixture".into(),
            categories,
            foodness: Some(FoodnessConfig {
                scorer: "scores.csv".into(),
                accept: 0.5,
            }),
            ..PipelineConfig::default()
        };
        let config_path = root.join("curate.json");
        fs::write(&config_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Fixture {
            root: root.to_path_buf(),
            config_path,
            manifest: root.join("m.jsonl"),
        }
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(&self.config_path).unwrap()
    }

    /// Imported foodness scores keyed by the ids ingest assigned: noise
    /// images score low, everything else high, and ties are broken by a
    /// per-file offset so queue order is interesting.
    pub fn write_scores(&self) {
        let m = load_manifest(&self.manifest).unwrap();
        let mut text = String::from("image_id,score\n");
        for (i, r) in m.records.iter().enumerate() {
            let name = r.source_path.file_name().unwrap().to_string_lossy();
            let base = if name.starts_with("nonfood") { 0.1 } else { 0.6 };
            text.push_str(&format!("{},{}\n", r.id, base + (i % 7) as f64 * 0.05));
        }
        fs::write(self.root.join("scores.csv"), text).unwrap();
    }
}

/// Every file the pipeline produces, keyed by path relative to the workspace.
pub fn outputs(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join("out"), root.join("formatted")];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    for p in [root.join("m.jsonl"), clusters_path(&root.join("m.jsonl"))] {
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
    }
    out
}

pub fn reset(root: &Path) {
    for d in ["out", "formatted", ".m.jsonl.snapshots"] {
        let _ = fs::remove_dir_all(root.join(d));
    }
    for f in ["m.jsonl", "m.clusters.jsonl"] {
        let _ = fs::remove_file(root.join(f));
    }
}

pub fn curate_run(root: &Path, fault: Option<u64>) -> bool {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_curate"));
    cmd.args(["run", "--until", "export", "--manifest"])
        .arg(root.join("m.jsonl"))
        .arg("--config")
        .arg(root.join("curate.json"))
        .env_remove(FAULT_POINT_ENV);
    if let Some(k) = fault {
        cmd.env(FAULT_POINT_ENV, k.to_string());
    }
    let out = cmd.output().unwrap();
    out.status.success()
}

/// Clean in-process run, then `trials` runs of the binary each killed at a
/// random checkpoint and rerun. Returns the checkpoint count of a clean run,
/// or the first trial whose outputs differ.
pub fn crash_trials(root: &Path, trials: usize, seed: u64) -> Result<u64, String> {
    let fx = Fixture::new(root, &CorpusPlan::default());
    let cfg = fx.config();
    let before = checkpoints_passed();
    run_stage(&cfg, Stage::Ingest, &fx.manifest, false).map_err(|e| e.to_string())?;
    fx.write_scores();
    run_pending(&cfg, &fx.manifest, Stage::Export).map_err(|e| e.to_string())?;
    let points = checkpoints_passed() - before;
    let clean = outputs(root);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        reset(root);
        let k = rng.random_range(1..=points);
        if curate_run(root, Some(k)) {
            return Err(format!("trial {trial}: fault point {k} of {points} did not fire"));
        }
        if !curate_run(root, None) {
            return Err(format!("trial {trial}: rerun after fault {k} failed"));
        }
        if outputs(root) != clean {
            return Err(format!("trial {trial}: fault point {k} changed the result"));
        }
    }
    Ok(points)
}
