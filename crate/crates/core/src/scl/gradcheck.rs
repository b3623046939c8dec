//! Central finite-difference verification of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{cross_entropy_with_logits, scl_loss, scl_loss_grad};
use super::matrix::{normalize_rows, Matrix};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Entries whose magnitudes are both below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckResult {
    pub instance: usize,
    pub rows: usize,
    pub cols: usize,
    pub max_rel_error: f64,
}

/// `|a - f| / max(|a|, |f|, REL_FLOOR)`, maximized over entries.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of scalar `f` at `x`, entry by entry.
pub fn numeric_gradient(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = v - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = v;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).expect("finite")
}

/// Random unit-norm batches of 2N rows with paired labels and a random temperature.
pub fn check_scl(n: usize, seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|instance| {
            let half = rng.random_range(1..=6);
            let cols = rng.random_range(2..=8);
            let classes = rng.random_range(1..=3);
            let first: Vec<usize> = (0..half).map(|_| rng.random_range(0..classes)).collect();
            let labels: Vec<usize> = first.iter().chain(&first).copied().collect();
            let temperature = rng.random_range(0.1..1.0);
            let s = normalize_rows(&random_matrix(&mut rng, 2 * half, cols))?;
            let analytic = scl_loss_grad(&s, &labels, temperature)?;
            let numeric = numeric_gradient(&s, STEP, |m| scl_loss(m, &labels, temperature))?;
            Ok(GradcheckResult {
                instance,
                rows: s.rows(),
                cols,
                max_rel_error: max_relative_error(&analytic, &numeric),
            })
        })
        .collect()
}

/// Random logits and labels through softmax + cross-entropy.
pub fn check_cross_entropy(n: usize, seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|instance| {
            let rows = rng.random_range(1..=8);
            let classes = rng.random_range(2..=10);
            let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
            let mut q = random_matrix(&mut rng, rows, classes);
            q.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            let (_, analytic) = cross_entropy_with_logits(&q, &labels)?;
            let numeric = numeric_gradient(&q, STEP, |m| Ok(cross_entropy_with_logits(m, &labels)?.0))?;
            Ok(GradcheckResult {
                instance,
                rows,
                cols: classes,
                max_rel_error: max_relative_error(&analytic, &numeric),
            })
        })
        .collect()
}
