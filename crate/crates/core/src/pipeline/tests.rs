use super::*;
use crate::manifest::{verify_accounting, verify_record_attribution};
use crate::synth::{write_corpus, CorpusPlan};

struct Workspace {
    dir: tempfile::TempDir,
    cfg: PipelineConfig,
}

impl Workspace {
    fn new(plan: &CorpusPlan) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let categories = write_corpus(&dir.path().join("raw"), plan).unwrap();
        let cfg = PipelineConfig {
            dataset_name: "demo".into(),
            categories,
            foodness: Some(FoodnessConfig {
                scorer: dir.path().join("scores.csv"),
                accept: 0.5,
            }),
            formatted_dir: dir.path().join("formatted"),
            export_dir: dir.path().join("out"),
            ..PipelineConfig::default()
        };
        Workspace { dir, cfg }
    }

    fn manifest(&self) -> PathBuf {
        self.dir.path().join("m.jsonl")
    }

    /// Imported scores: noise images look non-food.
    fn write_scores(&self) {
        let m = load_manifest(&self.manifest()).unwrap();
        let mut text = String::from("image_id,score\n");
        for r in &m.records {
            let name = r.source_path.file_name().unwrap().to_string_lossy();
            let s = if name.starts_with("nonfood") { 0.1 } else { 0.9 };
            text.push_str(&format!("{},{s}\n", r.id));
        }
        fs::write(self.dir.path().join("scores.csv"), text).unwrap();
    }

    fn run(&self, stage: Stage) -> Result<StageReport> {
        run_stage(&self.cfg, stage, &self.manifest(), false)
    }
}

#[test]
fn full_run_counts_and_accounting() {
    let ws = Workspace::new(&CorpusPlan::default());
    let ingest = ws.run(Stage::Ingest).unwrap();
    assert_eq!(ingest.input_count, 45);
    ws.write_scores();
    let format = ws.run(Stage::Format).unwrap();
    assert_eq!((format.input_count, format.kept_count), (45, 36));
    for reason in ["truncated", "undersized", "undecodable"] {
        assert_eq!(format.reasons[reason], 3, "{reason}");
    }
    let dedup = ws.run(Stage::Dedup).unwrap();
    assert_eq!(dedup.kept_count, 30);
    let food = ws.run(Stage::Foodness).unwrap();
    assert_eq!(food.kept_count, 24);
    ws.run(Stage::Calibrate).unwrap();
    let export = ws.run(Stage::Export).unwrap();
    assert_eq!(export.kept_count, 24);

    let m = load_manifest(&ws.manifest()).unwrap();
    assert!(verify_accounting(&m).is_empty());
    assert!(verify_record_attribution(&m).is_empty());
    let clusters = fs::read_to_string(clusters_path(&ws.manifest())).unwrap();
    assert_eq!(clusters.lines().count(), 6);

    let mut exported = 0;
    for c in &m.categories {
        exported += fs::read_dir(ws.cfg.export_dir.join(&c.name)).unwrap().count();
    }
    assert_eq!(exported, m.active_count());
    let summary: ExportSummary =
        serde_json::from_slice(&fs::read(ws.cfg.export_dir.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.total, 24);
    assert_eq!(summary.below_floor().count(), 3);
}

#[test]
fn formatted_copies_decode_to_source_pixels() {
    let ws = Workspace::new(&CorpusPlan::default());
    ws.run(Stage::Ingest).unwrap();
    ws.run(Stage::Format).unwrap();
    let m = load_manifest(&ws.manifest()).unwrap();
    for r in m.active() {
        let out = r.formatted_path.as_ref().unwrap();
        assert_eq!(out.extension().unwrap(), "jpg");
        assert_eq!(load_image(out).unwrap(), load_image(&r.source_path).unwrap());
        assert!(r.width >= DEFAULT_MIN_SIDE);
    }
}

#[test]
fn ids_are_content_hashes_with_suffix_on_repeat() {
    let ws = Workspace::new(&CorpusPlan::default());
    ws.run(Stage::Ingest).unwrap();
    let m = load_manifest(&ws.manifest()).unwrap();
    let suffixed: Vec<_> = m.records.iter().filter(|r| r.id.contains('-')).collect();
    assert_eq!(suffixed.len(), 3);
    for r in &m.records {
        let base = r.id.split('-').next().unwrap();
        assert_eq!(base.len(), 16);
        assert_eq!(base, content_id(&fs::read(&r.source_path).unwrap()));
    }
}

#[test]
fn stages_run_in_order_only() {
    let ws = Workspace::new(&CorpusPlan::default());
    assert!(matches!(ws.run(Stage::Format), Err(Error::StageOrder { .. })));
    ws.run(Stage::Ingest).unwrap();
    let err = ws.run(Stage::Dedup).unwrap_err();
    assert!(matches!(err, Error::StageOrder { .. }), "{err}");
    ws.run(Stage::Format).unwrap();
    assert!(matches!(ws.run(Stage::Format), Err(Error::StageOrder { .. })));
    assert!(matches!(ws.run(Stage::Ingest), Err(Error::StageOrder { .. })));
}

#[test]
fn forced_rerun_matches_clean_run() {
    let ws = Workspace::new(&CorpusPlan::default());
    ws.run(Stage::Ingest).unwrap();
    ws.write_scores();
    ws.run(Stage::Format).unwrap();
    ws.run(Stage::Dedup).unwrap();
    let after_dedup = fs::read(ws.manifest()).unwrap();
    ws.run(Stage::Foodness).unwrap();
    run_stage(&ws.cfg, Stage::Dedup, &ws.manifest(), true).unwrap();
    assert_eq!(fs::read(ws.manifest()).unwrap(), after_dedup);
    // Later stages are gone from history and must run again.
    assert!(run_stage(&ws.cfg, Stage::Calibrate, &ws.manifest(), true).is_err());
    ws.run(Stage::Foodness).unwrap();
}

#[test]
fn run_pending_resumes() {
    let ws = Workspace::new(&CorpusPlan::default());
    ws.run(Stage::Ingest).unwrap();
    ws.write_scores();
    let reports = run_pending(&ws.cfg, &ws.manifest(), Stage::Foodness).unwrap();
    assert_eq!(reports.iter().map(|r| r.stage).collect::<Vec<_>>(), [Stage::Format, Stage::Dedup, Stage::Foodness]);
    assert_eq!(run_pending(&ws.cfg, &ws.manifest(), Stage::Export).unwrap().len(), 2);
    assert!(run_pending(&ws.cfg, &ws.manifest(), Stage::Export).unwrap().is_empty());
}

#[test]
fn calibration_log_feeds_calibrate_stage() {
    let ws = Workspace::new(&CorpusPlan::default());
    ws.run(Stage::Ingest).unwrap();
    ws.write_scores();
    run_pending(&ws.cfg, &ws.manifest(), Stage::Foodness).unwrap();
    let mut session = CalibrationSession::open(&ws.manifest()).unwrap();
    let q = session.state().queue(QueueFilter::default());
    session
        .decide(CalibrationDecision::new(q[0].image_id.clone(), Action::Remove { reason: "not_food".into() }))
        .unwrap();
    session
        .decide(CalibrationDecision::new(q[1].image_id.clone(), Action::Reassign { category_id: 2 }))
        .unwrap();
    let report = ws.run(Stage::Calibrate).unwrap();
    assert_eq!((report.input_count, report.removed_count), (24, 1));
    assert_eq!(report.reasons["not_food"], 1);
    let m = load_manifest(&ws.manifest()).unwrap();
    assert_eq!(m.record(&q[1].image_id).unwrap().category_id, 2);
    let summary = export_dataset(&m, &ws.cfg.export_dir, 8).unwrap();
    let counts: Vec<u64> = summary.categories.iter().map(|c| c.count).collect();
    assert_eq!(counts.iter().sum::<u64>(), 23);
    assert_eq!(summary.below_floor().count(), counts.iter().filter(|&&c| c < 8).count());
}

#[test]
fn export_floor_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.jpg");
    fs::write(&src, b"jpeg").unwrap();
    let mut m = Manifest::new("t", vec![CategoryRecord::new(0, "under"), CategoryRecord::new(1, "at")]);
    assert!(export_dataset(&m, &dir.path().join("out"), 400).is_err());
    for (cat, n) in [(0u32, 399), (1, 400)] {
        for i in 0..n {
            m.records.push(ImageRecord::new(format!("c{cat}i{i}"), cat, &src));
        }
    }
    let out = dir.path().join("out");
    let s = export_dataset(&m, &out, DEFAULT_FLOOR).unwrap();
    assert_eq!(s.below_floor().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["under"]);
    assert_eq!(fs::read_dir(out.join("under")).unwrap().count(), 399);
    // Re-export replaces rather than accumulates.
    m.records.truncate(10);
    export_dataset(&m, &out, DEFAULT_FLOOR).unwrap();
    assert_eq!(fs::read_dir(out.join("under")).unwrap().count(), 10);
    assert!(!out.join("at").exists() || fs::read_dir(out.join("at")).unwrap().count() == 0);
}

#[test]
fn config_validation_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("laksa")).unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(
        &path,
        r#"{"dataset_name":"x","categories":[{"name":"laksa","root":"laksa"}],"foodness":{"scorer":"s.csv"}}"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.categories[0].root, dir.path().join("laksa"));
    assert_eq!(cfg.foodness.as_ref().unwrap().accept, 0.5);
    assert_eq!(cfg.export_dir, dir.path().join("out"));
    assert_eq!((cfg.min_side, cfg.dedup_threshold, cfg.export_floor), (32, 10, 400));

    let bad = |edit: fn(&mut PipelineConfig)| {
        let mut c = cfg.clone();
        edit(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.dedup_threshold = 193));
    assert!(bad(|c| c.min_side = 0));
    assert!(bad(|c| c.foodness.as_mut().unwrap().accept = 1.5));
    assert!(bad(|c| c.categories[0].root = "/nonexistent/dir".into()));
    assert!(bad(|c| c.categories[0].name = "../up".into()));
    assert!(bad(|c| c.categories.push(c.categories[0].clone())));
    fs::write(&path, r#"{"typo_field":1}"#).unwrap();
    assert!(PipelineConfig::load(&path).is_err());
}

#[test]
fn sidecar_names() {
    let m = Path::new("/w/M.jsonl");
    assert_eq!(sidecar(m, "decisions"), Path::new("/w/M.decisions.jsonl"));
    assert_eq!(snapshot_path(m, Stage::Dedup), Path::new("/w/.M.jsonl.snapshots/dedup.jsonl"));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn stage() -> impl Strategy<Value = Stage> {
        (0..Stage::ALL.len()).prop_map(|i| Stage::ALL[i])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        /// Whatever is attempted, the history stays a prefix of the stage
        /// order, balances, and refused calls leave the file untouched.
        #[test]
        fn history_is_an_ordered_prefix(calls in proptest::collection::vec((stage(), any::<bool>()), 1..10)) {
            let plan = CorpusPlan { unique: 3, categories: vec!["a".into(), "b".into()], ..CorpusPlan::default() };
            let ws = Workspace::new(&plan);
            let mut scored = false;
            for (s, force) in calls {
                if s == Stage::Foodness && !scored && ws.manifest().exists() {
                    ws.write_scores();
                    scored = true;
                }
                let before = fs::read(ws.manifest()).ok();
                let res = run_stage(&ws.cfg, s, &ws.manifest(), force);
                if res.is_err() {
                    prop_assert_eq!(fs::read(ws.manifest()).ok(), before);
                }
                if let Ok(m) = load_manifest(&ws.manifest()) {
                    let stages: Vec<Stage> = m.history.iter().map(|r| r.stage).collect();
                    prop_assert_eq!(&stages[..], &Stage::ALL[..stages.len()]);
                    prop_assert!(verify_accounting(&m).is_empty());
                    prop_assert!(verify_record_attribution(&m).is_empty());
                }
            }
        }
    }
}
