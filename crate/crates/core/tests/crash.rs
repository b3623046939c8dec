mod common;

use common::{curate_run, outputs, reset};

#[test]
fn killed_runs_converge_to_the_clean_result() {
    let dir = tempfile::tempdir().unwrap();
    let points = common::crash_trials(dir.path(), 10, 7).unwrap();
    assert!(points > 50, "only {points} checkpoints");
    let clean = outputs(dir.path());

    // Several crashes in a row before the final rerun.
    reset(dir.path());
    for k in [points / 2, points / 5, 3] {
        assert!(!curate_run(dir.path(), Some(k)));
    }
    assert!(curate_run(dir.path(), None));
    assert_eq!(outputs(dir.path()), clean);
}
