//! Food / non-food filtering.
//!
//! The built-in scorer is logistic regression over 304 cheap image features:
//! a 16-bin histogram per RGB channel (each summing to one) followed by a
//! 16x16 grayscale thumbnail scaled to [0, 1]. Scores produced by any external
//! model can be imported from a CSV file instead.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, to_grayscale, to_rgb, PixelImage};
use crate::manifest::{ImageRecord, Manifest, Stage, StageReport, StageTally};

pub const HIST_BINS: usize = 16;
pub const THUMB_SIDE: u32 = 16;
pub const FEATURE_DIM: usize = 3 * HIST_BINS + (THUMB_SIDE * THUMB_SIDE) as usize;
pub const DEFAULT_ACCEPT: f64 = 0.5;
pub const REMOVAL_REASON: &str = "non_food";
const CHECKPOINT_KIND: &str = "foodness-baseline";

pub fn extract_features(img: &PixelImage) -> Vec<f64> {
    let rgb = to_rgb(img);
    let pixels = f64::from(rgb.width()) * f64::from(rgb.height());
    let mut hist = [[0u64; HIST_BINS]; 3];
    for px in rgb.samples().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            hist[c][v as usize * HIST_BINS / 256] += 1;
        }
    }
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for channel in &hist {
        out.extend(channel.iter().map(|&n| n as f64 / pixels));
    }
    let thumb = resize_bilinear(&to_grayscale(img), THUMB_SIDE, THUMB_SIDE);
    out.extend(thumb.samples().iter().map(|&v| f64::from(v) / 255.0));
    out
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FoodnessScorer {
    Baseline { weights: Vec<f64>, bias: f64 },
    Imported(HashMap<String, f64>),
}

impl FoodnessScorer {
    pub fn zero(dim: usize) -> Self {
        FoodnessScorer::Baseline {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn imported(scores: HashMap<String, f64>) -> Result<Self> {
        if let Some((id, s)) = scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("score {s} for {id:?} outside [0,1]")));
        }
        Ok(FoodnessScorer::Imported(scores))
    }

    pub fn score_features(&self, features: &[f64]) -> Result<f64> {
        match self {
            FoodnessScorer::Baseline { weights, bias } => {
                if features.len() != weights.len() {
                    return Err(Error::Shape(format!(
                        "scorer expects {} features, got {}",
                        weights.len(),
                        features.len()
                    )));
                }
                let z: f64 = weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + bias;
                Ok(logistic(z))
            }
            FoodnessScorer::Imported(_) => Err(Error::invalid(
                "imported scorer cannot score raw features",
            )),
        }
    }

    /// Scores one record; the image loader is only called for the baseline scorer.
    pub fn score(&self, id: &str, load: impl FnOnce() -> Result<PixelImage>) -> Result<f64> {
        match self {
            FoodnessScorer::Imported(map) => map
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnknownImage(id.to_string())),
            FoodnessScorer::Baseline { .. } => self.score_features(&extract_features(&load()?)),
        }
    }

    /// `.csv` files are imported scores; anything else is a baseline checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            return FoodnessScorer::imported(read_scores_csv(path)?);
        }
        let ckpt = Checkpoint::load(path)?;
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let weights = ckpt.get("weights")?.data.clone();
        let bias = *ckpt
            .get("bias")?
            .data
            .first()
            .ok_or_else(|| Error::Checkpoint("empty bias".into()))?;
        Ok(FoodnessScorer::Baseline { weights, bias })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            FoodnessScorer::Baseline { weights, bias } => {
                let mut ckpt = Checkpoint::new(CHECKPOINT_KIND);
                ckpt.push("weights", 1, weights.len(), weights.clone());
                ckpt.push("bias", 1, 1, vec![*bias]);
                ckpt.save(path)
            }
            FoodnessScorer::Imported(map) => {
                let mut ids: Vec<_> = map.keys().collect();
                ids.sort();
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["image_id", "score"])?;
                for id in ids {
                    w.write_record([id.as_str(), &map[id].to_string()])?;
                }
                let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
                crate::fsutil::write_atomic(path, &bytes)
            }
        }
    }
}

/// Mean logistic loss of a baseline scorer over a labeled set.
pub fn logistic_loss(scorer: &FoodnessScorer, labeled: &[(Vec<f64>, bool)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in labeled {
        let p = scorer.score_features(x)?.clamp(1e-15, 1.0 - 1e-15);
        total -= if *y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / labeled.len() as f64)
}

/// Full-batch gradient descent on the mean logistic loss from a zero start.
/// Returns the scorer and the loss before each epoch's update.
pub fn train_baseline_traced(
    labeled: &[(Vec<f64>, bool)],
    epochs: usize,
    lr: f64,
) -> Result<(FoodnessScorer, Vec<f64>)> {
    let dim = labeled
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::invalid("no training examples"))?;
    if labeled.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Shape("training features differ in length".into()));
    }
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::invalid("training data must contain both food and non-food"));
    }
    let n = labeled.len() as f64;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (x, y) in labeled {
            let z: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
            let p = logistic(z);
            let target = if *y { 1.0 } else { 0.0 };
            let pc = p.clamp(1e-15, 1.0 - 1e-15);
            loss -= target * pc.ln() + (1.0 - target) * (1.0 - pc).ln();
            let r = p - target;
            for (g, v) in grad_w.iter_mut().zip(x) {
                *g += r * v;
            }
            grad_b += r;
        }
        curve.push(loss / n);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= lr * g / n;
        }
        bias -= lr * grad_b / n;
    }
    Ok((FoodnessScorer::Baseline { weights, bias }, curve))
}

pub fn train_baseline(labeled: &[(Vec<f64>, bool)], epochs: usize, lr: f64) -> Result<FoodnessScorer> {
    train_baseline_traced(labeled, epochs, lr).map(|(s, _)| s)
}

/// Scores every active record, stores the score, and removes records scoring
/// below `accept_threshold`. A score equal to the threshold counts as food.
pub fn filter_stage<L>(
    m: &mut Manifest,
    scorer: &FoodnessScorer,
    accept_threshold: f64,
    load: L,
) -> Result<StageReport>
where
    L: Fn(&ImageRecord) -> Result<PixelImage> + Sync,
{
    if !(0.0..=1.0).contains(&accept_threshold) {
        return Err(Error::invalid(format!("accept threshold {accept_threshold} outside [0,1]")));
    }
    let active: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].is_active()).collect();
    let scores: Vec<f64> = active
        .par_iter()
        .map(|&i| {
            let r = &m.records[i];
            scorer.score(&r.id, || load(r))
        })
        .collect::<Result<_>>()?;

    let mut tally = StageTally::new();
    for (&i, &score) in active.iter().zip(&scores) {
        let rec = &mut m.records[i];
        tally.input(rec.category_id);
        rec.foodness_score = Some(score);
        if score < accept_threshold {
            rec.remove(Stage::Foodness, REMOVAL_REASON);
            tally.removed(rec.category_id, REMOVAL_REASON);
        }
    }
    Ok(tally.finish(Stage::Foodness))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoodnessLabel {
    pub image_id: String,
    pub is_food: bool,
    pub source: LabelSource,
}

/// Confusion counts with "food" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_food: u64,
    pub false_food: u64,
    pub true_non_food: u64,
    pub false_non_food: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_food + self.false_food + self.true_non_food + self.false_non_food
    }

    /// Rows are the true class, columns the prediction; index 0 = non-food, 1 = food.
    pub fn matrix(&self) -> [[u64; 2]; 2] {
        [
            [self.true_non_food, self.false_food],
            [self.false_non_food, self.true_food],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

pub fn evaluate(
    labels: &[FoodnessLabel],
    threshold: f64,
    mut score_of: impl FnMut(&str) -> Result<f64>,
) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels to evaluate against"));
    }
    let mut c = Confusion::default();
    for label in labels {
        let predicted_food = score_of(&label.image_id)? >= threshold;
        match (label.is_food, predicted_food) {
            (true, true) => c.true_food += 1,
            (true, false) => c.false_non_food += 1,
            (false, true) => c.false_food += 1,
            (false, false) => c.true_non_food += 1,
        }
    }
    Ok(Evaluation {
        accuracy: (c.true_food + c.true_non_food) as f64 / c.total() as f64,
        confusion: c,
    })
}

#[derive(Deserialize)]
struct ScoreRow {
    image_id: String,
    score: f64,
}

#[derive(Deserialize)]
struct LabelRow {
    image_id: String,
    is_food: String,
}

pub fn read_scores_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in reader.deserialize() {
        let row: ScoreRow = row?;
        out.insert(row.image_id, row.score);
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "food" => Ok(true),
        "0" | "false" | "no" | "non_food" | "nonfood" => Ok(false),
        other => Err(Error::invalid(format!("cannot read {other:?} as is_food"))),
    }
}

/// Human labels from `image_id,is_food`; at most one label per image.
pub fn read_labels_csv(path: &Path) -> Result<Vec<FoodnessLabel>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        if !seen.insert(row.image_id.clone()) {
            return Err(Error::invalid(format!("second human label for {:?}", row.image_id)));
        }
        out.push(FoodnessLabel {
            is_food: parse_bool(&row.is_food)?,
            image_id: row.image_id,
            source: LabelSource::Human,
        });
    }
    Ok(out)
}
