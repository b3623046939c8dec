//! Stage runner: ingest, format, dedup, foodness, calibrate, export.
//!
//! Each stage reads the manifest, refuses to run out of order, and replaces
//! the manifest atomically with its report appended. Before a stage runs,
//! its input manifest is kept under `.<manifest>.snapshots/<stage>.jsonl`
//! so `force` can rerun it from the same starting point.

pub mod calibration;
pub mod server;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dedup::{dedup_manifest, HashTriple};
use crate::error::{Error, Result};
use crate::foodness::{filter_stage, FoodnessScorer, DEFAULT_ACCEPT};
use crate::fsutil::{self, checkpoint};
use crate::imaging::{decode_and_validate, encode_lossless, load_image};
use crate::manifest::{
    load_manifest, save_manifest, CategoryRecord, ImageRecord, Manifest, Stage, StageReport, StageTally,
};

pub use calibration::{
    apply_decision, Action, CalibrationDecision, CalibrationSession, CalibrationState, Progress, QueueFilter,
    QueueItem,
};

pub const DEFAULT_MIN_SIDE: u32 = 32;
pub const DEFAULT_DEDUP_THRESHOLD: u32 = 10;
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_FLOOR: u64 = 400;
const HASH_BITS: u32 = 192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryInput {
    pub name: String,
    pub root: PathBuf,
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoodnessConfig {
    /// Baseline checkpoint, or a `.csv` of imported scores.
    pub scorer: PathBuf,
    #[serde(default = "default_accept")]
    pub accept: f64,
}

fn default_accept() -> f64 {
    DEFAULT_ACCEPT
}

/// Pipeline settings. Relative paths in a loaded file are resolved against
/// the file's directory; category ids are positions in `categories`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_name: String,
    pub categories: Vec<CategoryInput>,
    pub min_side: u32,
    pub dedup_threshold: u32,
    pub foodness: Option<FoodnessConfig>,
    pub calibration_port: u16,
    pub formatted_dir: PathBuf,
    pub export_dir: PathBuf,
    pub export_floor: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_name: "dataset".into(),
            categories: Vec::new(),
            min_side: DEFAULT_MIN_SIDE,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            foodness: None,
            calibration_port: DEFAULT_PORT,
            formatted_dir: "formatted".into(),
            export_dir: "out".into(),
            export_floor: DEFAULT_FLOOR,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsutil::read(path)?).map_err(|e| Error::invalid(e.to_string()))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path relative to `base` instead.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.categories {
            fix(&mut c.root);
        }
        if let Some(f) = &mut self.foodness {
            fix(&mut f.scorer);
        }
        fix(&mut self.formatted_dir);
        fix(&mut self.export_dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_side == 0 {
            return Err(Error::invalid("min_side must be at least 1"));
        }
        if self.dedup_threshold > HASH_BITS {
            return Err(Error::invalid(format!(
                "dedup threshold {} above {HASH_BITS} bits",
                self.dedup_threshold
            )));
        }
        if let Some(f) = &self.foodness {
            if !(0.0..=1.0).contains(&f.accept) {
                return Err(Error::invalid(format!("accept threshold {} outside [0,1]", f.accept)));
            }
        }
        let mut names = HashSet::new();
        for c in &self.categories {
            let safe = !c.name.is_empty()
                && c.name != "."
                && c.name != ".."
                && !c.name.contains(['/', '\\'])
                && !c.name.starts_with('.');
            if !safe {
                return Err(Error::invalid(format!("category name {:?} is not a usable directory name", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("category {:?} listed twice", c.name)));
            }
            if !c.root.is_dir() {
                return Err(Error::invalid(format!("input root {} is not a directory", c.root.display())));
            }
        }
        Ok(())
    }

    pub fn category_records(&self) -> Vec<CategoryRecord> {
        self.categories
            .iter()
            .enumerate()
            .map(|(i, c)| CategoryRecord {
                id: i as u32,
                name: c.name.clone(),
                group: c.group.clone(),
                synonyms: c.synonyms.clone(),
            })
            .collect()
    }
}

/// `dir/M.jsonl` -> `dir/M.<what>.jsonl`.
pub fn sidecar(manifest: &Path, what: &str) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.{what}.jsonl"))
}

pub fn snapshot_path(manifest: &Path, stage: Stage) -> PathBuf {
    let name = manifest.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!(".{name}.snapshots")).join(format!("{stage}.jsonl"))
}

pub fn clusters_path(manifest: &Path) -> PathBuf {
    sidecar(manifest, "clusters")
}

fn order_error(stage: Stage, reason: impl Into<String>) -> Error {
    Error::StageOrder {
        stage: stage.to_string(),
        reason: reason.into(),
    }
}

/// The manifest `stage` should start from, honouring ordering and `force`.
fn stage_input(stage: Stage, manifest_path: &Path, force: bool) -> Result<Manifest> {
    let current = if manifest_path.exists() {
        Some(load_manifest(manifest_path)?)
    } else {
        None
    };
    let ran = current.as_ref().is_some_and(|m| m.has_run(stage));
    if ran && !force {
        return Err(order_error(stage, "already run; pass force to rerun it"));
    }
    if ran {
        let snap = snapshot_path(manifest_path, stage);
        if stage == Stage::Ingest {
            return Ok(Manifest::default());
        }
        return load_manifest(&snap).map_err(|e| order_error(stage, format!("cannot rerun without its snapshot: {e}")));
    }
    let Some(prev) = stage.previous() else {
        return Ok(Manifest::default());
    };
    let m = current.ok_or_else(|| order_error(stage, format!("no manifest at {}", manifest_path.display())))?;
    if m.last_stage() != Some(prev) {
        let last = m.last_stage().map_or("nothing".to_string(), |s| s.to_string());
        return Err(order_error(stage, format!("needs {prev} to have run last, found {last}")));
    }
    Ok(m)
}

/// Runs one stage against the manifest at `manifest_path`.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, manifest_path: &Path, force: bool) -> Result<StageReport> {
    let mut m = stage_input(stage, manifest_path, force)?;
    if stage != Stage::Ingest {
        save_manifest(&m, &snapshot_path(manifest_path, stage))?;
    }
    match stage {
        Stage::Ingest => m = ingest(cfg)?,
        Stage::Format => {
            let report = format(cfg, &mut m)?;
            m.history.push(report);
        }
        Stage::Dedup => {
            let (report, clusters) = dedup(&mut m, cfg.dedup_threshold)?;
            let mut text = String::new();
            for c in &clusters {
                text.push_str(&serde_json::to_string(c)?);
                text.push('\n');
            }
            fsutil::write_atomic(&clusters_path(manifest_path), text.as_bytes())?;
            m.history.push(report);
        }
        Stage::Foodness => {
            let f = cfg
                .foodness
                .as_ref()
                .ok_or_else(|| Error::invalid("no foodness scorer configured"))?;
            let scorer = FoodnessScorer::load(&f.scorer)?;
            let report = filter_stage(&mut m, &scorer, f.accept, |r| load_image(r.pixel_path()))?;
            m.history.push(report);
        }
        Stage::Calibrate => {
            let log = calibration::read_decision_log(&calibration::decision_log_path(manifest_path))?;
            m = CalibrationState::replay(m, log)?.finish();
        }
        Stage::Export => {
            let summary = export_dataset(&m, &cfg.export_dir, cfg.export_floor)?;
            let n = summary.total;
            m.history.push(StageReport::totals(Stage::Export, n, n, BTreeMap::new()));
        }
    }
    checkpoint();
    save_manifest(&m, manifest_path)?;
    Ok(m.history.last().expect("stage appended a report").clone())
}

/// Runs every stage after the last completed one, up to and including `until`.
pub fn run_pending(cfg: &PipelineConfig, manifest_path: &Path, until: Stage) -> Result<Vec<StageReport>> {
    let last = if manifest_path.exists() {
        load_manifest(manifest_path)?.last_stage()
    } else {
        None
    };
    let start = last.map_or(0, |s| s.index() + 1);
    Stage::ALL[start..=until.index()]
        .iter()
        .map(|&s| run_stage(cfg, s, manifest_path, false))
        .collect()
}

fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let ty = entry.file_type().map_err(|e| Error::io(&path, e))?;
            if ty.is_dir() {
                stack.push(path);
            } else if ty.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// One record per file under each category root. Ids are the first 16 hex
/// digits of the content's SHA-256, suffixed `-1`, `-2`, ... on repeats.
pub fn ingest(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let mut m = Manifest::new(cfg.dataset_name.clone(), cfg.category_records());
    let mut used = HashSet::new();
    let mut tally = StageTally::new();
    for (cat, input) in cfg.categories.iter().enumerate() {
        for path in files_under(&input.root)? {
            let bytes = fsutil::read(&path)?;
            let base = content_id(&bytes);
            let mut id = base.clone();
            let mut n = 0;
            while !used.insert(id.clone()) {
                n += 1;
                id = format!("{base}-{n}");
            }
            let mut r = ImageRecord::new(id, cat as u32, path);
            r.byte_size = bytes.len() as u64;
            tally.input(cat as u32);
            m.records.push(r);
        }
    }
    m.history.push(tally.finish(Stage::Ingest));
    Ok(m)
}

enum Formatted {
    Kept { width: u32, height: u32, path: PathBuf },
    Rejected(&'static str),
}

/// Decodes every active record, drops truncated, undersized and undecodable
/// files, and writes a JPEG copy to `formatted_dir/<id>.jpg`: JPEG input
/// byte for byte, anything else losslessly re-encoded.
pub fn format(cfg: &PipelineConfig, m: &mut Manifest) -> Result<StageReport> {
    let active: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].is_active()).collect();
    let results: Vec<Formatted> = active
        .par_iter()
        .map(|&i| {
            let r = &m.records[i];
            let bytes = fsutil::read(&r.source_path)?;
            let img = match decode_and_validate(&bytes, cfg.min_side) {
                Ok(img) => img,
                Err(rej) => return Ok(Formatted::Rejected(rej.reason.as_str())),
            };
            let out = if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
                bytes
            } else {
                encode_lossless(&img)?
            };
            let path = cfg.formatted_dir.join(format!("{}.jpg", r.id));
            if fs::read(&path).ok().as_deref() != Some(&out[..]) {
                fsutil::write_atomic(&path, &out)?;
            }
            Ok(Formatted::Kept {
                width: img.width(),
                height: img.height(),
                path,
            })
        })
        .collect::<Result<_>>()?;
    let mut tally = StageTally::new();
    for (&i, res) in active.iter().zip(results) {
        let r = &mut m.records[i];
        tally.input(r.category_id);
        match res {
            Formatted::Kept { width, height, path } => {
                r.width = width;
                r.height = height;
                r.formatted_path = Some(path);
            }
            Formatted::Rejected(reason) => {
                r.remove(Stage::Format, reason);
                tally.removed(r.category_id, reason);
            }
        }
    }
    Ok(tally.finish(Stage::Format))
}

/// Hashes active records that lack hashes, then clusters and removes duplicates.
pub fn dedup(m: &mut Manifest, threshold: u32) -> Result<(StageReport, Vec<crate::dedup::DuplicateCluster>)> {
    let todo: Vec<usize> = (0..m.records.len())
        .filter(|&i| m.records[i].is_active() && m.records[i].hash.is_none())
        .collect();
    let hashes: Vec<HashTriple> = todo
        .par_iter()
        .map(|&i| load_image(m.records[i].pixel_path()).map(|img| HashTriple::of(&img)))
        .collect::<Result<_>>()?;
    for (&i, h) in todo.iter().zip(hashes) {
        m.records[i].hash = Some(h);
    }
    dedup_manifest(m, threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedCategory {
    pub id: u32,
    pub name: String,
    pub count: u64,
    pub below_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub dataset_name: String,
    pub total: u64,
    pub floor: u64,
    pub categories: Vec<ExportedCategory>,
}

impl ExportSummary {
    pub fn below_floor(&self) -> impl Iterator<Item = &ExportedCategory> {
        self.categories.iter().filter(|c| c.below_floor)
    }
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Copies active images to `out/<category_name>/<id>.jpg` and writes
/// `summary.json`. Existing per-category directories are replaced.
pub fn export_dataset(m: &Manifest, out: &Path, floor: u64) -> Result<ExportSummary> {
    if m.active_count() == 0 {
        return Err(Error::invalid("nothing to export: no active images"));
    }
    let mut counts: BTreeMap<u32, u64> = m.categories.iter().map(|c| (c.id, 0)).collect();
    for c in &m.categories {
        let dir = out.join(&c.name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    let summary_path = out.join(SUMMARY_FILE);
    if summary_path.exists() {
        fs::remove_file(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    }
    let active: Vec<&ImageRecord> = m.active().collect();
    active.par_iter().try_for_each(|r| {
        let cat = m.category(r.category_id).ok_or(Error::UnknownCategory(r.category_id))?;
        let bytes = fsutil::read(r.pixel_path())?;
        fsutil::write_atomic(&out.join(&cat.name).join(format!("{}.jpg", r.id)), &bytes)
    })?;
    for r in &active {
        *counts.entry(r.category_id).or_default() += 1;
    }
    let summary = ExportSummary {
        dataset_name: m.dataset_name.clone(),
        total: active.len() as u64,
        floor,
        categories: m
            .categories
            .iter()
            .map(|c| ExportedCategory {
                id: c.id,
                name: c.name.clone(),
                count: counts[&c.id],
                below_floor: counts[&c.id] < floor,
            })
            .collect(),
    };
    fsutil::write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests;
