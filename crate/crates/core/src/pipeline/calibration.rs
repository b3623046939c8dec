//! Human calibration: an append-only decision log folded into the manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::manifest::{Manifest, Stage, StageReport, StageTally};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Confirm,
    Reassign { category_id: u32 },
    Remove { reason: String },
    /// Not a decision: moves the image to the back of the queue.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationDecision {
    pub image_id: String,
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub reviewer: String,
    /// Unix seconds.
    #[serde(default)]
    pub timestamp: u64,
}

impl CalibrationDecision {
    pub fn new(image_id: impl Into<String>, action: Action) -> Self {
        CalibrationDecision {
            image_id: image_id.into(),
            action,
            reviewer: String::new(),
            timestamp: 0,
        }
    }
}

/// Rejects decisions that cannot apply to `m` as it stands.
pub fn check_decision(m: &Manifest, d: &CalibrationDecision) -> Result<()> {
    let rec = m.record(&d.image_id).ok_or_else(|| Error::UnknownImage(d.image_id.clone()))?;
    if !rec.is_active() {
        return Err(Error::ImageNotActive(d.image_id.clone()));
    }
    match &d.action {
        Action::Reassign { category_id } if m.category(*category_id).is_none() => {
            Err(Error::UnknownCategory(*category_id))
        }
        Action::Remove { reason } if reason.trim().is_empty() => {
            Err(Error::invalid("removal needs a reason"))
        }
        _ => Ok(()),
    }
}

/// Applies one decision. Confirm and skip leave the manifest untouched.
pub fn apply_decision(m: &mut Manifest, d: &CalibrationDecision) -> Result<()> {
    check_decision(m, d)?;
    let rec = m.record_mut(&d.image_id).expect("checked");
    match &d.action {
        Action::Confirm | Action::Skip => {}
        Action::Reassign { category_id } => rec.category_id = *category_id,
        Action::Remove { reason } => rec.remove(Stage::Calibrate, reason.clone()),
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: u64,
    pub decided: u64,
    pub removed: u64,
    pub reassigned: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: String,
    pub category_id: u32,
    pub category: String,
    pub thumbnail_url: String,
    pub foodness_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QueueFilter {
    pub category_id: Option<u32>,
    pub limit: Option<usize>,
}

/// A manifest after the foodness stage plus the decisions made on it.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    base: Manifest,
    current: Manifest,
    log: Vec<CalibrationDecision>,
    decided: HashSet<String>,
    /// Latest skip position per image.
    skipped: HashMap<String, usize>,
    rejected: usize,
}

impl CalibrationState {
    pub fn new(base: Manifest) -> Result<Self> {
        if base.last_stage() != Some(Stage::Foodness) {
            return Err(Error::StageOrder {
                stage: Stage::Calibrate.to_string(),
                reason: "calibration starts right after the foodness stage".into(),
            });
        }
        Ok(CalibrationState {
            current: base.clone(),
            base,
            log: Vec::new(),
            decided: HashSet::new(),
            skipped: HashMap::new(),
            rejected: 0,
        })
    }

    /// Replays `decisions` in order. Decisions that no longer apply are
    /// skipped and counted, so replaying a log is deterministic.
    pub fn replay(base: Manifest, decisions: impl IntoIterator<Item = CalibrationDecision>) -> Result<Self> {
        let mut s = CalibrationState::new(base)?;
        for d in decisions {
            if s.record(d).is_err() {
                s.rejected += 1;
            }
        }
        Ok(s)
    }

    /// Applies and remembers a decision; the log itself is the caller's job.
    pub fn record(&mut self, d: CalibrationDecision) -> Result<()> {
        apply_decision(&mut self.current, &d)?;
        if d.action == Action::Skip {
            self.skipped.insert(d.image_id.clone(), self.log.len());
        } else {
            self.decided.insert(d.image_id.clone());
        }
        self.log.push(d);
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.current
    }

    pub fn log(&self) -> &[CalibrationDecision] {
        &self.log
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Undecided active images, most suspect (lowest score) first, ties by
    /// id; skipped images go to the back in the order they were skipped.
    pub fn queue(&self, filter: QueueFilter) -> Vec<QueueItem> {
        let mut items: Vec<_> = self
            .current
            .active()
            .filter(|r| !self.decided.contains(&r.id))
            .filter(|r| filter.category_id.is_none_or(|c| c == r.category_id))
            .collect();
        items.sort_by(|a, b| {
            let key = |id: &str| self.skipped.get(id).copied();
            key(&a.id)
                .cmp(&key(&b.id))
                .then_with(|| {
                    let (sa, sb) = (a.foodness_score.unwrap_or(f64::INFINITY), b.foodness_score.unwrap_or(f64::INFINITY));
                    sa.total_cmp(&sb)
                })
                .then_with(|| a.id.cmp(&b.id))
        });
        items
            .into_iter()
            .take(filter.limit.unwrap_or(usize::MAX))
            .map(|r| QueueItem {
                image_id: r.id.clone(),
                category_id: r.category_id,
                category: self.current.category(r.category_id).map(|c| c.name.clone()).unwrap_or_default(),
                thumbnail_url: format!("/api/image/{}", r.id),
                foodness_score: r.foodness_score,
            })
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.base.active_count() as u64,
            decided: self.decided.len() as u64,
            ..Progress::default()
        };
        for (now, before) in self.current.records.iter().zip(&self.base.records) {
            if !before.is_active() {
                continue;
            }
            if !now.is_active() {
                p.removed += 1;
            } else if now.category_id != before.category_id {
                p.reassigned += 1;
            }
        }
        p
    }

    /// The calibrated manifest with its stage report appended.
    pub fn finish(self) -> Manifest {
        let mut tally = StageTally::new();
        for (now, before) in self.current.records.iter().zip(&self.base.records) {
            if !before.is_active() {
                continue;
            }
            tally.input(before.category_id);
            if let Some(rm) = now.removal.as_ref().filter(|r| r.stage == Stage::Calibrate) {
                tally.removed(before.category_id, &rm.reason);
            }
        }
        let report: StageReport = tally.finish(Stage::Calibrate);
        let mut m = self.current;
        m.history.push(report);
        m
    }
}

/// Decision log that sits next to a manifest: `M.jsonl` -> `M.decisions.jsonl`.
pub fn decision_log_path(manifest: &Path) -> PathBuf {
    super::sidecar(manifest, "decisions")
}

pub fn read_decision_log(path: &Path) -> Result<Vec<CalibrationDecision>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = String::from_utf8(fsutil::read(path)?).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(d) => out.push(d),
            // A torn final line is what a crash during append leaves behind.
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::ManifestParse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn drop_torn_tail(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = fsutil::read(path)?;
    if bytes.last().is_none_or(|&b| b == b'\n') {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    fsutil::write_atomic(path, &bytes[..keep])
}

/// Serialized writer over a calibration state and its log file.
#[derive(Debug)]
pub struct CalibrationSession {
    state: CalibrationState,
    log_path: PathBuf,
    manifest_path: PathBuf,
}

impl CalibrationSession {
    /// Loads the manifest and replays the existing decision log.
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let base = crate::manifest::load_manifest(manifest_path)?;
        let log_path = decision_log_path(manifest_path);
        drop_torn_tail(&log_path)?;
        let state = CalibrationState::replay(base, read_decision_log(&log_path)?)?;
        Ok(CalibrationSession {
            state,
            log_path,
            manifest_path: manifest_path.to_path_buf(),
        })
    }

    pub fn state(&self) -> &CalibrationState {
        &self.state
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    /// Validates, appends to the log, then applies.
    pub fn decide(&mut self, d: CalibrationDecision) -> Result<()> {
        check_decision(self.state.manifest(), &d)?;
        fsutil::append_line(&self.log_path, &serde_json::to_string(&d)?)?;
        self.state.record(d)
    }

    pub fn category_counts(&self) -> BTreeMap<u32, u64> {
        let mut out: BTreeMap<u32, u64> = self.state.manifest().categories.iter().map(|c| (c.id, 0)).collect();
        for r in self.state.manifest().active() {
            *out.entry(r.category_id).or_default() += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{verify_accounting, verify_record_attribution, CategoryRecord, ImageRecord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base(scores: &[(&str, f64)]) -> Manifest {
        let mut m = Manifest::new("t", vec![CategoryRecord::new(0, "laksa"), CategoryRecord::new(1, "satay")]);
        let mut tally = StageTally::new();
        for (i, (id, s)) in scores.iter().enumerate() {
            let mut r = ImageRecord::new(*id, (i % 2) as u32, format!("{id}.jpg"));
            r.width = 8;
            r.height = 8;
            r.foodness_score = Some(*s);
            tally.input(r.category_id);
            m.records.push(r);
        }
        m.history.push(tally.finish(Stage::Foodness));
        m
    }

    fn ids(q: &[QueueItem]) -> Vec<&str> {
        q.iter().map(|i| i.image_id.as_str()).collect()
    }

    #[test]
    fn queue_lowest_score_first() {
        let s = CalibrationState::new(base(&[("a", 0.95), ("b", 0.55)])).unwrap();
        let q = s.queue(QueueFilter::default());
        assert_eq!(ids(&q), ["b", "a"]);
        assert_eq!(q[0].thumbnail_url, "/api/image/b");
        assert_eq!(q[0].category, "satay");
    }

    #[test]
    fn queue_ties_by_id_and_filters() {
        let s = CalibrationState::new(base(&[("d", 0.7), ("c", 0.7), ("b", 0.7), ("a", 0.9)])).unwrap();
        assert_eq!(ids(&s.queue(QueueFilter::default())), ["b", "c", "d", "a"]);
        let f = QueueFilter { category_id: Some(0), limit: Some(1) };
        assert_eq!(ids(&s.queue(f)), ["b"]);
    }

    #[test]
    fn decided_images_leave_queue_and_skips_go_last() {
        let mut s = CalibrationState::new(base(&[("a", 0.6), ("b", 0.7), ("c", 0.8)])).unwrap();
        s.record(CalibrationDecision::new("a", Action::Skip)).unwrap();
        s.record(CalibrationDecision::new("b", Action::Confirm)).unwrap();
        assert_eq!(ids(&s.queue(QueueFilter::default())), ["c", "a"]);
        s.record(CalibrationDecision::new("c", Action::Confirm)).unwrap();
        s.record(CalibrationDecision::new("a", Action::Confirm)).unwrap();
        assert!(s.queue(QueueFilter::default()).is_empty());
    }

    #[test]
    fn confirm_changes_nothing_but_the_log() {
        let m = base(&[("a", 0.6)]);
        let mut s = CalibrationState::new(m.clone()).unwrap();
        s.record(CalibrationDecision::new("a", Action::Confirm)).unwrap();
        assert_eq!(s.manifest(), &m);
        assert_eq!(s.log().len(), 1);
    }

    #[test]
    fn reassign_then_remove_ends_removed() {
        let mut s = CalibrationState::new(base(&[("a", 0.6), ("b", 0.9)])).unwrap();
        s.record(CalibrationDecision::new("a", Action::Reassign { category_id: 1 })).unwrap();
        assert_eq!(s.progress().reassigned, 1);
        s.record(CalibrationDecision::new("a", Action::Remove { reason: "not_food".into() })).unwrap();
        assert_eq!(s.log().len(), 2);
        let p = s.progress();
        assert_eq!((p.total, p.decided, p.removed, p.reassigned), (2, 1, 1, 0));
        let m = s.finish();
        let a = m.record("a").unwrap();
        assert!(!a.is_active());
        assert_eq!(a.removal.as_ref().unwrap().stage, Stage::Calibrate);
        assert!(verify_accounting(&m).is_empty());
        assert!(verify_record_attribution(&m).is_empty());
    }

    #[test]
    fn errors_name_the_problem() {
        let mut s = CalibrationState::new(base(&[("a", 0.6)])).unwrap();
        assert!(matches!(s.record(CalibrationDecision::new("zz", Action::Confirm)), Err(Error::UnknownImage(_))));
        assert!(matches!(
            s.record(CalibrationDecision::new("a", Action::Reassign { category_id: 7 })),
            Err(Error::UnknownCategory(7))
        ));
        s.record(CalibrationDecision::new("a", Action::Remove { reason: "blurry".into() })).unwrap();
        assert!(matches!(s.record(CalibrationDecision::new("a", Action::Confirm)), Err(Error::ImageNotActive(_))));
        assert_eq!(s.log().len(), 1);
    }

    #[test]
    fn calibration_needs_foodness_last() {
        let mut m = base(&[("a", 0.6)]);
        m.history[0].stage = Stage::Dedup;
        assert!(matches!(CalibrationState::new(m), Err(Error::StageOrder { .. })));
    }

    fn action() -> impl Strategy<Value = Action> {
        prop_oneof![
            Just(Action::Confirm),
            (0u32..3).prop_map(|category_id| Action::Reassign { category_id }),
            Just(Action::Remove { reason: "not_food".into() }),
            Just(Action::Remove { reason: String::new() }),
            Just(Action::Skip),
        ]
    }

    proptest! {
        /// The final state is a pure fold of the log: replaying gives the
        /// same manifest, and feeding the log again on top changes nothing.
        #[test]
        fn replay_is_a_pure_fold(log in proptest::collection::vec((0usize..20, action()), 0..200)) {
            let names: Vec<String> = (0..20).map(|i| format!("img{i:02}")).collect();
            let scores: Vec<(&str, f64)> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as f64 / 20.0)).collect();
            let m = base(&scores);
            let log: Vec<CalibrationDecision> =
                log.into_iter().map(|(i, a)| CalibrationDecision::new(names[i].clone(), a)).collect();
            let once = CalibrationState::replay(m.clone(), log.clone()).unwrap();
            let twice = CalibrationState::replay(m.clone(), log.clone()).unwrap();
            prop_assert_eq!(once.manifest(), twice.manifest());
            prop_assert_eq!(once.log().len() + once.rejected(), log.len());
            let mut again = once.clone();
            for d in log {
                let _ = again.record(d);
            }
            prop_assert_eq!(again.manifest(), once.manifest());
            let p = once.progress();
            let fin = once.finish();
            prop_assert!(verify_accounting(&fin).is_empty());
            prop_assert_eq!(fin.history.last().unwrap().removed_count, p.removed);
        }
    }

    #[test]
    fn thousand_random_decisions_replay_identically() {
        let names: Vec<String> = (0..60).map(|i| format!("img{i:02}")).collect();
        let scores: Vec<(&str, f64)> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as f64 / 60.0)).collect();
        let m = base(&scores);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let log: Vec<CalibrationDecision> = (0..1000)
            .map(|_| {
                let id = names[rng.random_range(0..names.len())].clone();
                let action = match rng.random_range(0..4) {
                    0 => Action::Confirm,
                    1 => Action::Reassign { category_id: rng.random_range(0..3) },
                    2 => Action::Remove { reason: "not_food".into() },
                    _ => Action::Skip,
                };
                CalibrationDecision::new(id, action)
            })
            .collect();
        let once = CalibrationState::replay(m.clone(), log.clone()).unwrap();
        let twice = CalibrationState::replay(m, log).unwrap();
        assert_eq!(once.manifest(), twice.manifest());
    }

    #[test]
    fn decision_json_shape() {
        let d = CalibrationDecision::new("a", Action::Reassign { category_id: 4 });
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        assert_eq!(v["action"], "reassign");
        assert_eq!(v["category_id"], 4);
        let back: CalibrationDecision = serde_json::from_str(r#"{"image_id":"a","action":"confirm"}"#).unwrap();
        assert_eq!(back, CalibrationDecision::new("a", Action::Confirm));
    }

    #[test]
    fn session_log_survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        crate::manifest::save_manifest(&base(&[("a", 0.6), ("b", 0.7)]), &path).unwrap();
        let mut s = CalibrationSession::open(&path).unwrap();
        s.decide(CalibrationDecision::new("a", Action::Remove { reason: "blurry".into() })).unwrap();
        assert!(s.decide(CalibrationDecision::new("a", Action::Confirm)).is_err());
        let log = decision_log_path(&path);
        assert_eq!(log, dir.path().join("m.decisions.jsonl"));
        let mut text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 1);
        text.push_str("{\"image_id\":\"b\",\"act");
        std::fs::write(&log, text).unwrap();
        let mut reopened = CalibrationSession::open(&path).unwrap();
        assert_eq!(reopened.state().manifest(), s.state().manifest());
        reopened.decide(CalibrationDecision::new("b", Action::Confirm)).unwrap();
        assert_eq!(read_decision_log(&log).unwrap().len(), 2);
        assert_eq!(reopened.category_counts()[&1], 1);
    }
}
