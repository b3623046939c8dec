//! Two-stage training: contrastive pretraining of encoder + projection, then a
//! linear probe on the frozen encoder.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{make_multiview_batch, AugmentationPair};
use super::loss::{cross_entropy_with_logits, scl_loss_and_grad, softmax_rows};
use super::matrix::Matrix;
use super::nn::{prepare_image, Encoder, EncoderShape, LinearHead, Params, ProjectionHead};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{load_image, RealImage};

pub const STAGE1_KIND: &str = "scl-stage1";
pub const STAGE2_KIND: &str = "scl-stage2";
pub const DATA_INIT_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Source images per contrastive batch (2N views). Stage 2 uses 2N.
    pub batch_size: usize,
    pub seed: u64,
    pub encoder: EncoderShape,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub augment: AugmentationPair,
    /// Standardize encoder layers on a data sample before training.
    pub data_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.1,
            stage1_lr: 0.1,
            stage2_lr: 0.05,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 8,
            seed: 7,
            encoder: EncoderShape {
                input_side: 32,
                conv1_channels: 8,
                conv2_channels: 16,
                embed_dim: 64,
            },
            projection_hidden: 64,
            projection_dim: 32,
            augment: AugmentationPair::default(),
            data_init: true,
        }
    }
}

impl TrainConfig {
    /// Published hyperparameters: 200 epochs, 2048-d embeddings, 128-d projections.
    pub fn published() -> Self {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: 200,
            encoder: EncoderShape {
                embed_dim: 2048,
                ..d.encoder
            },
            projection_hidden: 2048,
            projection_dim: 128,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.temperature, self.stage1_lr, self.stage2_lr];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("temperature and learning rates must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        let e = &self.encoder;
        let dims = [
            self.batch_size,
            e.input_side,
            e.conv1_channels,
            e.conv2_channels,
            e.embed_dim,
            self.projection_hidden,
            self.projection_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("batch size and layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Images already resized for the encoder, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<RealImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledImages {
    pub fn new(images: Vec<RealImage>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images, {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!("label {bad} outside {} classes", class_names.len())));
        }
        Ok(LabeledImages {
            images,
            labels,
            class_names,
        })
    }

    /// One subdirectory per class, sorted by name; every decodable file inside is a sample.
    pub fn from_dir(dir: &Path, side: usize) -> Result<Self> {
        let mut classes: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect();
        classes.sort();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut names = Vec::new();
        for (label, class_dir) in classes.iter().enumerate() {
            names.push(class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
            let mut files: Vec<_> = fs::read_dir(class_dir)
                .map_err(|e| Error::io(class_dir, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                images.push(prepare_image(&load_image(&f)?, side));
                labels.push(label);
            }
        }
        LabeledImages::new(images, labels, names)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledImages {
        LabeledImages {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Seeded per-class split; returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (LabeledImages, LabeledImages) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    fn present_classes(&self) -> usize {
        let mut seen = vec![false; self.num_classes()];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ (batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub encoder: Encoder,
    pub projection: ProjectionHead,
    /// Mean per-anchor contrastive loss for each epoch.
    pub losses: Vec<f64>,
}

impl Stage1Model {
    pub fn init(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(cfg.encoder, &mut rng);
        let projection = ProjectionHead::new(cfg.encoder.embed_dim, cfg.projection_hidden, cfg.projection_dim, &mut rng);
        Stage1Model {
            encoder,
            projection,
            losses: Vec::new(),
        }
    }

    /// Seeded initialization, followed by data-dependent standardization of
    /// the encoder on up to [`DATA_INIT_SAMPLES`] images when `cfg.data_init`.
    pub fn init_for(cfg: &TrainConfig, data: &LabeledImages) -> Result<Self> {
        let mut model = Stage1Model::init(cfg);
        if cfg.data_init {
            let order = epoch_order(data.len(), cfg.seed, usize::MAX);
            let sample: Vec<RealImage> = order
                .iter()
                .take(DATA_INIT_SAMPLES)
                .map(|&i| data.images[i].clone())
                .collect();
            model.encoder.standardize(&sample)?;
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(STAGE1_KIND);
        self.encoder.write_to(&mut ckpt, "encoder");
        self.projection.write_to(&mut ckpt, "projection");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(STAGE1_KIND)?;
        Ok(Stage1Model {
            encoder: Encoder::read_from(ckpt, "encoder")?,
            projection: ProjectionHead::read_from(ckpt, "projection")?,
            losses: Vec::new(),
        })
    }
}

/// One contrastive SGD step; returns the mean per-anchor loss of the batch.
pub fn stage1_step(model: &mut Stage1Model, samples: &[&RealImage], labels: &[usize], cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let batch = make_multiview_batch(samples, labels, &cfg.augment, seed)?;
    let (enc, proj) = (&model.encoder, &model.projection);
    let traces = batch
        .views
        .par_iter()
        .map(|v| {
            let et = enc.forward(v)?;
            let pt = proj.forward(&et.embedding)?;
            Ok((et, pt))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = traces.iter().map(|(_, p)| p.projection.clone()).collect();
    let s = Matrix::from_rows(&rows)?;
    let (loss, grad) = scl_loss_and_grad(&s, &batch.labels, cfg.temperature)?;
    let scale = 1.0 / batch.len() as f64;

    let per_view: Vec<(Encoder, ProjectionHead)> = traces
        .par_iter()
        .enumerate()
        .map(|(i, (et, pt))| {
            let mut ge = enc.zeros_like();
            let mut gp = proj.zeros_like();
            let gs: Vec<f64> = grad.row(i).iter().map(|g| g * scale).collect();
            let grad_e = proj.backward(&et.embedding, pt, &gs, &mut gp);
            enc.backward(et, &grad_e, &mut ge);
            (ge, gp)
        })
        .collect();
    let mut ge = enc.zeros_like();
    let mut gp = proj.zeros_like();
    for (e, p) in &per_view {
        ge.add_from(e);
        gp.add_from(p);
    }
    model.encoder.sgd_step(&ge, cfg.stage1_lr, cfg.weight_decay);
    model.projection.sgd_step(&gp, cfg.stage1_lr, cfg.weight_decay);
    Ok(loss * scale)
}

/// Contrastive pretraining from a fresh seeded initialization.
pub fn train_stage1(data: &LabeledImages, cfg: &TrainConfig) -> Result<Stage1Model> {
    train_stage1_with(data, cfg, |_, _| {})
}

/// As [`train_stage1`], calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_stage1_with(data: &LabeledImages, cfg: &TrainConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<Stage1Model> {
    cfg.validate()?;
    if data.present_classes() < 2 {
        return Err(Error::invalid("contrastive training needs at least two classes"));
    }
    let mut model = Stage1Model::init_for(cfg, data)?;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&RealImage> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            total += stage1_step(&mut model, &samples, &labels, cfg, batch_seed(cfg.seed, epoch, b))?;
            batches += 1;
        }
        let mean = total / batches as f64;
        model.losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(model)
}

/// Unit-norm embeddings of every image, one row each.
pub fn embed_all(encoder: &Encoder, images: &[RealImage]) -> Result<Matrix> {
    let rows = images
        .par_iter()
        .map(|img| encoder.embed(img))
        .collect::<Result<Vec<_>>>()?;
    Matrix::new(images.len(), encoder.embed_dim(), rows.concat())
}

#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub encoder: Encoder,
    pub head: LinearHead,
    /// Mean cross-entropy for each epoch.
    pub losses: Vec<f64>,
}

impl Stage2Model {
    pub fn logits(&self, images: &[RealImage]) -> Result<Matrix> {
        Ok(self.head.logits(&embed_all(&self.encoder, images)?))
    }

    pub fn predict_proba(&self, images: &[RealImage]) -> Result<Matrix> {
        softmax_rows(&self.logits(images)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(STAGE2_KIND);
        self.encoder.write_to(&mut ckpt, "encoder");
        self.head.write_to(&mut ckpt, "head");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(STAGE2_KIND)?;
        Ok(Stage2Model {
            encoder: Encoder::read_from(ckpt, "encoder")?,
            head: LinearHead::read_from(ckpt, "head")?,
            losses: Vec::new(),
        })
    }
}

/// Linear probe on precomputed embeddings. Mini-batches of `2 * batch_size`.
pub fn train_linear_head(embeddings: &Matrix, labels: &[usize], classes: usize, cfg: &TrainConfig) -> Result<(LinearHead, Vec<f64>)> {
    cfg.validate()?;
    if embeddings.rows() != labels.len() {
        return Err(Error::Shape(format!("{} embeddings, {} labels", embeddings.rows(), labels.len())));
    }
    let mut seen = vec![false; classes];
    for &l in labels {
        *seen.get_mut(l).ok_or_else(|| Error::invalid(format!("label {l} outside {classes} classes")))? = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("class {missing} has no training samples")));
    }
    let mut head = LinearHead::new(embeddings.cols(), classes)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(labels.len(), cfg.seed ^ 0x5EED, epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(2 * cfg.batch_size) {
            let mut x = Matrix::zeros(chunk.len(), embeddings.cols());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(embeddings.row(i));
            }
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad_q) = cross_entropy_with_logits(&head.logits(&x), &y)?;
            let mut grads = LinearHead {
                linear: head.linear.zeros_like(),
            };
            for r in 0..x.rows() {
                head.linear.backward(x.row(r), grad_q.row(r), &mut grads.linear);
            }
            head.sgd_step(&grads, cfg.stage2_lr, cfg.weight_decay);
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok((head, losses))
}

/// Trains a linear head on the frozen `encoder`.
pub fn train_stage2(encoder: &Encoder, data: &LabeledImages, cfg: &TrainConfig) -> Result<Stage2Model> {
    let embeddings = embed_all(encoder, &data.images)?;
    let (head, losses) = train_linear_head(&embeddings, &data.labels, data.num_classes(), cfg)?;
    Ok(Stage2Model {
        encoder: encoder.clone(),
        head,
        losses,
    })
}

/// Fraction of rows whose label is among the `k` largest logits. Ties go to
/// the lower class index.
pub fn topk_accuracy(logits: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::invalid("top-k accuracy of an empty set"));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    if k == 0 || k > logits.cols() {
        return Err(Error::invalid(format!("k = {k} with {} classes", logits.cols())));
    }
    logits.ensure_finite("logits")?;
    let mut hits = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let q = logits.row(r);
        let target = *q.get(y).ok_or_else(|| Error::invalid(format!("label {y} out of range")))?;
        let ahead = q
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < y))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn evaluate_topk(model: &Stage2Model, data: &LabeledImages, k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    topk_accuracy(&model.logits(&data.images)?, &data.labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scl::matrix::normalize_rows;
    use rand::Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            encoder: EncoderShape {
                input_side: 8,
                conv1_channels: 3,
                conv2_channels: 4,
                embed_dim: 6,
            },
            projection_hidden: 6,
            projection_dim: 4,
            ..TrainConfig::default()
        }
    }

    fn blobs(n: usize, side: u32) -> LabeledImages {
        let colours = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let (cx, cy) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
            let mut s = Vec::new();
            for y in 0..side {
                for x in 0..side {
                    let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < 6.0;
                    for ch in 0..3 {
                        s.push(if inside { colours[c][ch] } else { 0.5 });
                    }
                }
            }
            images.push(RealImage::new(side, side, 3, s).unwrap());
            labels.push(c);
        }
        LabeledImages::new(images, labels, vec!["r".into(), "g".into(), "b".into()]).unwrap()
    }

    #[test]
    fn stage1_loss_decreases_and_is_deterministic() {
        let data = blobs(60, 8);
        let cfg = TrainConfig { epochs: 30, ..small_cfg() };
        let a = train_stage1(&data, &cfg).unwrap();
        assert!(a.losses.last().unwrap() < a.losses.first().unwrap(), "{:?}", a.losses);
        let b = train_stage1(&data, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.encoder, b.encoder);
    }

    #[test]
    fn zero_epochs_leave_init() {
        let data = blobs(6, 8);
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let m = train_stage1(&data, &cfg).unwrap();
        assert_eq!(m.encoder, Stage1Model::init_for(&cfg, &data).unwrap().encoder);
        let plain = TrainConfig { data_init: false, ..cfg };
        assert_eq!(train_stage1(&data, &plain).unwrap().encoder, Stage1Model::init(&plain).encoder);
        assert!(m.losses.is_empty());
    }

    #[test]
    fn single_class_refused() {
        let mut data = blobs(6, 8);
        data.labels.iter_mut().for_each(|l| *l = 0);
        assert!(train_stage1(&data, &small_cfg()).is_err());
    }

    #[test]
    fn stage2_keeps_encoder_and_separates() {
        let data = blobs(30, 8);
        let cfg = TrainConfig { epochs: 200, ..small_cfg() };
        let enc = Stage1Model::init(&cfg).encoder;
        let before: Vec<u8> = enc.to_owned_bytes();
        let m = train_stage2(&enc, &data, &cfg).unwrap();
        assert_eq!(before, enc.to_owned_bytes());
        assert_eq!(before, m.encoder.to_owned_bytes());
        assert!(m.losses.last().unwrap() < m.losses.first().unwrap());
    }

    trait Bytes {
        fn to_owned_bytes(&self) -> Vec<u8>;
    }

    impl Bytes for Encoder {
        fn to_owned_bytes(&self) -> Vec<u8> {
            self.params().concat().iter().flat_map(|v| v.to_le_bytes()).collect()
        }
    }

    #[test]
    fn separable_embeddings_reach_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centres = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..90 {
            let c = i % 3;
            rows.push(centres[c].iter().map(|v| v + rng.random_range(-0.2..0.2)).collect::<Vec<f64>>());
            labels.push(c);
        }
        let x = normalize_rows(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let cfg = TrainConfig { epochs: 100, ..small_cfg() };
        let (head, _) = train_linear_head(&x, &labels, 3, &cfg).unwrap();
        assert_eq!(topk_accuracy(&head.logits(&x), &labels, 1).unwrap(), 1.0);
    }

    #[test]
    fn zero_epoch_head_is_uniform() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8], vec![0.8, 0.6]]).unwrap();
        let labels = [0, 1, 2, 3];
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let (head, _) = train_linear_head(&x, &labels, 4, &cfg).unwrap();
        let (ce, _) = cross_entropy_with_logits(&head.logits(&x), &labels).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_class_refused() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(train_linear_head(&x, &[0, 0], 2, &small_cfg()).is_err());
    }

    #[test]
    fn hand_counted_topk() {
        let q = Matrix::from_rows(&[
            vec![3.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 5.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 9.0, 1.0],
        ])
        .unwrap();
        let labels = [0, 1, 0, 5];
        assert_eq!(topk_accuracy(&q, &labels, 1).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&q, &labels, 5).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&q, &labels, 6).unwrap(), 1.0);
        assert!(topk_accuracy(&q, &labels, 7).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let q = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(topk_accuracy(&q, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&q, &[1], 1).unwrap(), 0.0);
    }

    #[test]
    fn checkpoints_round_trip() {
        let cfg = small_cfg();
        let m = Stage1Model::init(&cfg);
        let back = Stage1Model::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.encoder, m.encoder);
        assert_eq!(back.projection, m.projection);
        assert!(Stage2Model::from_checkpoint(&m.to_checkpoint()).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig::published();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 5}"#).unwrap();
        assert_eq!(partial.epochs, 5);
        assert!(TrainConfig { temperature: 0.0, ..cfg }.validate().is_err());
    }
}
