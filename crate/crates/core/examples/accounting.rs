//! Stage reports carrying a curation history's counts, checked for
//! conservation and chaining, then one count nudged to show the violation.
//!
//! cargo run --example accounting

use std::collections::BTreeMap;

use foodcurate::manifest::{verify_accounting, CategoryRecord, Manifest, Stage, StageReport};

fn main() {
    let steps = [
        (Stage::Ingest, 226_809, 226_809, vec![]),
        (Stage::Format, 226_809, 226_791, vec![("truncated", 10), ("undersized", 8)]),
        (Stage::Dedup, 226_791, 212_765, vec![("duplicate", 14_026)]),
        (Stage::Foodness, 212_765, 211_536, vec![("non_food", 1_229)]),
        (Stage::Calibrate, 211_536, 209_861, vec![("wrong_category", 1_675)]),
    ];
    let mut m = Manifest::new("foods", vec![CategoryRecord::new(0, "all")]);
    for (stage, input, kept, reasons) in steps {
        let reasons: BTreeMap<String, u64> = reasons.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        m.history.push(StageReport::totals(stage, input, kept, reasons));
    }
    for r in &m.history {
        println!("{:<10} in {:>7}  kept {:>7}  removed {:>6}", r.stage, r.input_count, r.kept_count, r.removed_count);
    }
    println!("violations: {}", verify_accounting(&m).len());

    m.history[2].kept_count += 1;
    for v in verify_accounting(&m) {
        println!("after nudging dedup kept by one: {v}");
    }
}
