//! Analytic gradients of the contrastive loss and the softmax cross-entropy
//! against central finite differences.
//!
//! cargo run --example gradcheck [n] [seed]

use foodcurate::scl::gradcheck::{check_cross_entropy, check_scl, STEP};

fn main() -> foodcurate::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    println!("step {STEP:e}");
    for (name, results) in [("scl", check_scl(n, seed)?), ("cross-entropy", check_cross_entropy(n, seed)?)] {
        let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let shapes: Vec<String> = results.iter().take(4).map(|r| format!("{}x{}", r.rows, r.cols)).collect();
        println!("{name:<14} {n} instances (shapes {} ...), worst relative error {worst:.2e}", shapes.join(", "));
    }
    Ok(())
}
