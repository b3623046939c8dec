//! Supervised contrastive loss, softmax and cross-entropy, with analytic gradients.
//!
//! For anchor `i` over a batch `K` of unit-norm rows `s`, with positives
//! `P(i) = { p != i : y_p = y_i }`:
//!
//! ```text
//! l_i = -1/|P(i)| * sum_{p in P(i)} log( exp(s_i.s_p / T) / sum_{k != i} exp(s_i.s_k / T) )
//! L   = sum_i l_i
//! ```
//!
//! Every exponential goes through a max-subtracted log-sum-exp.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

pub const LOG_EPS: f64 = 1e-12;

/// `P(i)` for every anchor.
pub fn positive_sets(labels: &[usize]) -> Vec<Vec<usize>> {
    (0..labels.len())
        .map(|i| {
            (0..labels.len())
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect()
        })
        .collect()
}

fn check_scl_inputs(s: &Matrix, labels: &[usize], temperature: f64) -> Result<Vec<Vec<usize>>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if labels.len() != s.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            s.rows()
        )));
    }
    s.ensure_finite("scl_loss input")?;
    let positives = positive_sets(labels);
    if let Some(i) = positives.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("anchor {i} has no positive")));
    }
    Ok(positives)
}

struct AnchorTerms {
    loss: f64,
    /// Softmax over k != i of s_i.s_k / T (entry i is 0).
    probs: Vec<f64>,
}

fn anchor_terms(s: &Matrix, i: usize, positives: &[usize], temperature: f64) -> AnchorTerms {
    let n = s.rows();
    let si = s.row(i);
    let logits: Vec<f64> = (0..n)
        .map(|k| if k == i { f64::NEG_INFINITY } else { dot(si, s.row(k)) / temperature })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let mean_pos = positives.iter().map(|&p| logits[p]).sum::<f64>() / positives.len() as f64;
    AnchorTerms {
        loss: lse - mean_pos,
        probs: exps.iter().map(|e| e / sum).collect(),
    }
}

/// Per-anchor losses `l_i`.
pub fn scl_loss_terms(s: &Matrix, labels: &[usize], temperature: f64) -> Result<Vec<f64>> {
    let positives = check_scl_inputs(s, labels, temperature)?;
    Ok((0..s.rows())
        .map(|i| anchor_terms(s, i, &positives[i], temperature).loss)
        .collect())
}

pub fn scl_loss(s: &Matrix, labels: &[usize], temperature: f64) -> Result<f64> {
    Ok(scl_loss_terms(s, labels, temperature)?.iter().sum())
}

/// `L` and `dL/dS`, treating every entry of `S` as a free variable.
pub fn scl_loss_and_grad(s: &Matrix, labels: &[usize], temperature: f64) -> Result<(f64, Matrix)> {
    let positives = check_scl_inputs(s, labels, temperature)?;
    let (n, d) = (s.rows(), s.cols());
    let mut grad = Matrix::zeros(n, d);
    let mut total = 0.0;
    for i in 0..n {
        let terms = anchor_terms(s, i, &positives[i], temperature);
        total += terms.loss;
        let inv_p = 1.0 / positives[i].len() as f64;
        let mut coeff = terms.probs;
        for &p in &positives[i] {
            coeff[p] -= inv_p;
        }
        for (k, c) in coeff.iter().enumerate() {
            if k == i || *c == 0.0 {
                continue;
            }
            let c = c / temperature;
            let (si, sk) = (s.row(i).to_vec(), s.row(k).to_vec());
            for (g, v) in grad.row_mut(i).iter_mut().zip(&sk) {
                *g += c * v;
            }
            for (g, v) in grad.row_mut(k).iter_mut().zip(&si) {
                *g += c * v;
            }
        }
    }
    Ok((total, grad))
}

pub fn scl_loss_grad(s: &Matrix, labels: &[usize], temperature: f64) -> Result<Matrix> {
    scl_loss_and_grad(s, labels, temperature).map(|(_, g)| g)
}

pub fn softmax(q: &[f64]) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn softmax_rows(q: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for r in 0..q.rows() {
        out.row_mut(r).copy_from_slice(&softmax(q.row(r))?);
    }
    Ok(out)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::invalid(format!("label {c} outside {classes} classes")));
        }
        m.set(r, c, 1.0);
    }
    Ok(m)
}

/// Mean cross-entropy between predicted distributions and one-hot targets,
/// with `log` clamped at [`LOG_EPS`].
pub fn cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<f64> {
    if (probs.rows(), probs.cols()) != (targets.rows(), targets.cols()) {
        return Err(Error::Shape(format!(
            "predictions {}x{} vs targets {}x{}",
            probs.rows(),
            probs.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -y * p.max(LOG_EPS).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Cross-entropy of `softmax(logits)` against integer labels and its gradient
/// with respect to the logits, `(softmax - onehot) / rows`.
pub fn cross_entropy_with_logits(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    let targets = one_hot(labels, logits.cols())?;
    let probs = softmax_rows(logits)?;
    let loss = cross_entropy(&probs, &targets)?;
    let n = logits.rows() as f64;
    let mut grad = probs;
    for (g, y) in grad.data_mut().iter_mut().zip(targets.data()) {
        *g = (*g - y) / n;
    }
    Ok((loss, grad))
}
