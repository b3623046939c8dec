//! Durable per-image record of the curation pipeline.
//!
//! A manifest is a JSON Lines file: a header object carrying the dataset name
//! and category table, one line per [`ImageRecord`], then one line per
//! [`StageReport`] tagged with `"kind":"stage_report"`. Removed records stay
//! in the file with the stage and reason that removed them, so every stage's
//! counts can be re-derived from the records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dedup::HashTriple;
use crate::error::{Error, Result};
use crate::fsutil;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl CategoryRecord {
    pub fn new(id: u32, name: impl Into<String>) -> Self {
        CategoryRecord {
            id,
            name: name.into(),
            group: String::new(),
            synonyms: Vec::new(),
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Format,
    Dedup,
    Foodness,
    Calibrate,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Format,
        Stage::Dedup,
        Stage::Foodness,
        Stage::Calibrate,
        Stage::Export,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Format => "format",
            Stage::Dedup => "dedup",
            Stage::Foodness => "foodness",
            Stage::Calibrate => "calibrate",
            Stage::Export => "export",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn previous(self) -> Option<Stage> {
        self.index().checked_sub(1).map(|i| Stage::ALL[i])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub category_id: u32,
    pub source_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub byte_size: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removal: Option<Removal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<HashTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foodness_score: Option<f64>,
    /// Converted copy written by the format stage; later stages read pixels from here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formatted_path: Option<PathBuf>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, category_id: u32, source_path: impl Into<PathBuf>) -> Self {
        ImageRecord {
            id: id.into(),
            category_id,
            source_path: source_path.into(),
            width: 0,
            height: 0,
            byte_size: 0,
            status: Status::Active,
            removal: None,
            hash: None,
            foodness_score: None,
            formatted_path: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// File holding the pixels later stages should read.
    pub fn pixel_path(&self) -> &Path {
        self.formatted_path.as_deref().unwrap_or(&self.source_path)
    }

    pub fn remove(&mut self, stage: Stage, reason: impl Into<String>) {
        self.status = Status::Removed;
        self.removal = Some(Removal {
            stage,
            reason: reason.into(),
        });
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: u64,
    pub kept: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub input_count: u64,
    pub kept_count: u64,
    pub removed_count: u64,
    #[serde(default)]
    pub reasons: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<u32, StageCounts>,
}

impl StageReport {
    /// Report with dataset-level totals only.
    pub fn totals(stage: Stage, input: u64, kept: u64, reasons: BTreeMap<String, u64>) -> Self {
        StageReport {
            stage,
            input_count: input,
            kept_count: kept,
            removed_count: input.saturating_sub(kept),
            reasons,
            per_category: BTreeMap::new(),
        }
    }
}

/// Accumulates a stage's counts while it runs.
#[derive(Debug, Default)]
pub struct StageTally {
    reasons: BTreeMap<String, u64>,
    per_category: BTreeMap<u32, StageCounts>,
}

impl StageTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, category_id: u32) {
        let c = self.per_category.entry(category_id).or_default();
        c.input += 1;
        c.kept += 1;
    }

    pub fn removed(&mut self, category_id: u32, reason: &str) {
        let c = self.per_category.entry(category_id).or_default();
        c.kept -= 1;
        c.removed += 1;
        *self.reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn finish(self, stage: Stage) -> StageReport {
        let sum = |f: fn(&StageCounts) -> u64| self.per_category.values().map(f).sum::<u64>();
        StageReport {
            stage,
            input_count: sum(|c| c.input),
            kept_count: sum(|c| c.kept),
            removed_count: sum(|c| c.removed),
            reasons: self.reasons,
            per_category: self.per_category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub dataset_name: String,
    pub categories: Vec<CategoryRecord>,
    pub records: Vec<ImageRecord>,
    pub history: Vec<StageReport>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset_name: String,
    schema_version: u32,
    categories: Vec<CategoryRecord>,
}

#[derive(Serialize)]
struct ReportLine<'a> {
    kind: &'static str,
    #[serde(flatten)]
    report: &'a StageReport,
}

impl Manifest {
    pub fn new(dataset_name: impl Into<String>, categories: Vec<CategoryRecord>) -> Self {
        Manifest {
            dataset_name: dataset_name.into(),
            categories,
            records: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn category(&self, id: u32) -> Option<&CategoryRecord> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn record_mut(&mut self, id: &str) -> Option<&mut ImageRecord> {
        self.records.iter_mut().find(|r| r.id == id)
    }

    pub fn active(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn last_stage(&self) -> Option<Stage> {
        self.history.last().map(|r| r.stage)
    }

    pub fn has_run(&self, stage: Stage) -> bool {
        self.history.iter().any(|r| r.stage == stage)
    }

    /// Checks every type invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let mut category_ids = HashSet::new();
        for c in &self.categories {
            if c.name.is_empty() {
                return Err(Error::ManifestInvariant {
                    id: format!("category {}", c.id),
                    message: "category name is empty".into(),
                });
            }
            if !category_ids.insert(c.id) {
                return Err(Error::ManifestInvariant {
                    id: format!("category {}", c.id),
                    message: "duplicate category id".into(),
                });
            }
        }
        let formatted = self.has_run(Stage::Format);
        let mut ids = HashSet::new();
        for r in &self.records {
            let fail = |message: &str| Error::ManifestInvariant {
                id: r.id.clone(),
                message: message.to_string(),
            };
            if !ids.insert(r.id.as_str()) {
                return Err(fail("duplicate record id"));
            }
            if !category_ids.contains(&r.category_id) {
                return Err(fail("category_id does not name a category"));
            }
            if (r.status == Status::Removed) != r.removal.is_some() {
                return Err(fail("status and removal disagree"));
            }
            let survived_format = r
                .removal
                .as_ref()
                .is_none_or(|rm| rm.stage > Stage::Format);
            if formatted && survived_format && (r.width == 0 || r.height == 0) {
                return Err(fail("zero dimension after formatting"));
            }
            if let Some(s) = r.foodness_score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(fail("foodness score outside [0,1]"));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = Header {
            dataset_name: self.dataset_name.clone(),
            schema_version: SCHEMA_VERSION,
            categories: self.categories.clone(),
        };
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        for report in &self.history {
            out.push_str(&serde_json::to_string(&ReportLine {
                kind: "stage_report",
                report,
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: String| Error::ManifestParse {
            line: line + 1,
            message,
        };
        let (n, first) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing header line".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| parse_err(n, e.to_string()))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(parse_err(
                n,
                format!("unsupported schema_version {}", header.schema_version),
            ));
        }
        let mut m = Manifest::new(header.dataset_name, header.categories);
        for (n, line) in lines {
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
            if value.get("kind").and_then(|k| k.as_str()) == Some("stage_report") {
                let report: StageReport =
                    serde_json::from_value(value).map_err(|e| parse_err(n, e.to_string()))?;
                m.history.push(report);
            } else {
                if !m.history.is_empty() {
                    return Err(parse_err(n, "image record after stage reports".into()));
                }
                let record: ImageRecord =
                    serde_json::from_value(value).map_err(|e| parse_err(n, e.to_string()))?;
                m.records.push(record);
            }
        }
        m.validate()?;
        Ok(m)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::ManifestParse {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    Manifest::from_jsonl(&text)
}

/// Writes the manifest atomically. Output bytes depend only on the manifest value.
pub fn save_manifest(m: &Manifest, path: &Path) -> Result<()> {
    m.validate()?;
    fsutil::write_atomic(path, m.to_jsonl()?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccountingViolation {
    Unbalanced {
        index: usize,
        stage: Stage,
        input: u64,
        kept: u64,
        removed: u64,
    },
    ReasonsMismatch {
        index: usize,
        stage: Stage,
        reasons_total: u64,
        removed: u64,
    },
    BrokenChain {
        index: usize,
        previous_kept: u64,
        input: u64,
    },
    RecordCountMismatch {
        stage: Stage,
        from_records: u64,
        reported: u64,
    },
}

impl fmt::Display for AccountingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccountingViolation::Unbalanced {
                index,
                stage,
                input,
                kept,
                removed,
            } => write!(
                f,
                "report #{index} ({stage}): input {input} != kept {kept} + removed {removed}"
            ),
            AccountingViolation::ReasonsMismatch {
                index,
                stage,
                reasons_total,
                removed,
            } => write!(
                f,
                "report #{index} ({stage}): reasons sum to {reasons_total}, removed is {removed}"
            ),
            AccountingViolation::BrokenChain {
                index,
                previous_kept,
                input,
            } => write!(
                f,
                "report #{index}: input {input} does not match previous kept {previous_kept}"
            ),
            AccountingViolation::RecordCountMismatch {
                stage,
                from_records,
                reported,
            } => write!(
                f,
                "{stage}: records attribute {from_records} removals, report says {reported}"
            ),
        }
    }
}

/// Checks conservation within every stage report and chaining between
/// consecutive reports. An empty result means the history balances.
pub fn verify_accounting(m: &Manifest) -> Vec<AccountingViolation> {
    let mut out = Vec::new();
    for (index, r) in m.history.iter().enumerate() {
        if r.kept_count.checked_add(r.removed_count) != Some(r.input_count) {
            out.push(AccountingViolation::Unbalanced {
                index,
                stage: r.stage,
                input: r.input_count,
                kept: r.kept_count,
                removed: r.removed_count,
            });
        }
        let reasons_total: u64 = r.reasons.values().sum();
        if reasons_total != r.removed_count {
            out.push(AccountingViolation::ReasonsMismatch {
                index,
                stage: r.stage,
                reasons_total,
                removed: r.removed_count,
            });
        }
        if index > 0 {
            let previous_kept = m.history[index - 1].kept_count;
            if previous_kept != r.input_count {
                out.push(AccountingViolation::BrokenChain {
                    index,
                    previous_kept,
                    input: r.input_count,
                });
            }
        }
    }
    out
}

/// Compares per-stage removal counts recomputed from the records with the
/// stage reports. Only meaningful when the records back the history.
pub fn verify_record_attribution(m: &Manifest) -> Vec<AccountingViolation> {
    let mut from_records: HashMap<Stage, u64> = HashMap::new();
    for r in &m.records {
        if let Some(rm) = &r.removal {
            *from_records.entry(rm.stage).or_default() += 1;
        }
    }
    let mut reported: HashMap<Stage, u64> = HashMap::new();
    for r in &m.history {
        *reported.entry(r.stage).or_default() += r.removed_count;
    }
    let mut out = Vec::new();
    for stage in Stage::ALL {
        let a = from_records.get(&stage).copied().unwrap_or(0);
        let b = reported.get(&stage).copied().unwrap_or(0);
        if a != b {
            out.push(AccountingViolation::RecordCountMismatch {
                stage,
                from_records: a,
                reported: b,
            });
        }
    }
    out
}
