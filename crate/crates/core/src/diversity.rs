//! Dataset diversity: compressibility of the average image, and mean pairwise
//! embedding distance within each category.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{encode_lossless, resize_bilinear, to_rgb, AverageAccumulator, PixelImage};
use crate::manifest::{ImageRecord, Manifest};
use crate::scl::matrix::{dot, norm};
use crate::scl::nn::Encoder;

/// Side of the average image.
pub const AVERAGE_SIDE: u32 = 256;
pub const DEFAULT_SAMPLE_CAP: usize = 2000;

/// Image to unit-norm vector.
pub trait Embedder: Sync {
    fn embed(&self, img: &PixelImage) -> Result<Vec<f64>>;
}

impl Embedder for Encoder {
    fn embed(&self, img: &PixelImage) -> Result<Vec<f64>> {
        self.embed_pixels(img)
    }
}

impl<F> Embedder for F
where
    F: Fn(&PixelImage) -> Result<Vec<f64>> + Sync,
{
    fn embed(&self, img: &PixelImage) -> Result<Vec<f64>> {
        self(img)
    }
}

fn to_average_frame(img: &PixelImage) -> PixelImage {
    resize_bilinear(&to_rgb(img), AVERAGE_SIDE, AVERAGE_SIDE)
}

/// Byte length of the lossless encoding of the 256x256 average image. Smaller
/// means vaguer, i.e. more diverse.
pub fn jpeg_size_metric(images: &[PixelImage]) -> Result<u64> {
    jpeg_size_metric_from(images.iter().map(|i| Ok(i.clone())))
}

/// As [`jpeg_size_metric`], consuming images one at a time.
pub fn jpeg_size_metric_from(images: impl IntoIterator<Item = Result<PixelImage>>) -> Result<u64> {
    let mut acc = AverageAccumulator::default();
    for img in images {
        acc.add(&to_average_frame(&img?))?;
    }
    if acc.count() == 0 {
        return Err(Error::invalid("jpeg size metric of an empty category"));
    }
    Ok(encode_lossless(&acc.finish()?)?.len() as u64)
}

/// `(1 - cos(a, b)) / 2`, clamped to [0, 1].
pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    let cos = if denom > 0.0 { dot(a, b) / denom } else { 0.0 };
    ((1.0 - cos) / 2.0).clamp(0.0, 1.0)
}

/// Unordered pair `(i, j)`, `i < j`, for linear index `t` in row-major order
/// over the strict upper triangle of an `n x n` matrix.
fn pair_at(n: usize, t: usize) -> (usize, usize) {
    // Row i starts at offset(i) = i * (2n - i - 1) / 2.
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if offset(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + t - offset(lo))
}

/// Mean distance over all unordered pairs, or over `sample_cap` pairs drawn
/// uniformly without replacement when there are more.
pub fn mean_pairwise_distance(embeddings: &[Vec<f64>], sample_cap: usize, seed: u64) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::invalid("pairwise distance needs at least two images"));
    }
    if sample_cap == 0 {
        return Err(Error::invalid("sample cap must be positive"));
    }
    let total = n * (n - 1) / 2;
    let mut pairs: Vec<usize> = if total <= sample_cap {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, total, sample_cap).into_vec()
    };
    pairs.sort_unstable();
    let sum: f64 = pairs
        .iter()
        .map(|&t| {
            let (i, j) = pair_at(n, t);
            embedding_distance(&embeddings[i], &embeddings[j])
        })
        .sum();
    Ok((sum / pairs.len() as f64).clamp(0.0, 1.0))
}

pub fn pairwise_distance_metric(
    images: &[PixelImage],
    embedder: &dyn Embedder,
    sample_cap: usize,
    seed: u64,
) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::invalid("pairwise distance needs at least two images"));
    }
    let embeddings = images
        .par_iter()
        .map(|img| embedder.embed(img))
        .collect::<Result<Vec<_>>>()?;
    mean_pairwise_distance(&embeddings, sample_cap, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Jpeg,
    Embed,
    #[default]
    Both,
}

impl Metric {
    pub fn jpeg(self) -> bool {
        matches!(self, Metric::Jpeg | Metric::Both)
    }

    pub fn embed(self) -> bool {
        matches!(self, Metric::Embed | Metric::Both)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg" => Ok(Metric::Jpeg),
            "embed" => Ok(Metric::Embed),
            "both" => Ok(Metric::Both),
            other => Err(Error::invalid(format!("unknown diversity metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityOptions {
    pub metric: Metric,
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for DiversityOptions {
    fn default() -> Self {
        DiversityOptions {
            metric: Metric::Both,
            sample_cap: DEFAULT_SAMPLE_CAP,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiversity {
    pub n_images: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jpeg_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_pairwise_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub per_category: BTreeMap<u32, CategoryDiversity>,
    /// Unweighted mean of the per-category distances.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset_mean_distance: Option<f64>,
}

impl DiversityReport {
    pub fn from_categories(per_category: BTreeMap<u32, CategoryDiversity>) -> Self {
        let ds: Vec<f64> = per_category.values().filter_map(|c| c.mean_pairwise_distance).collect();
        let dataset_mean_distance = (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64);
        DiversityReport {
            per_category,
            dataset_mean_distance,
        }
    }
}

/// Both metrics for every category's active images. Categories too small for
/// a metric (none for jpeg, fewer than two for distance) leave it absent.
pub fn dataset_report<L>(
    manifest: &Manifest,
    load: L,
    embedder: Option<&dyn Embedder>,
    opts: &DiversityOptions,
) -> Result<DiversityReport>
where
    L: Fn(&ImageRecord) -> Result<PixelImage> + Sync,
{
    if opts.metric.embed() && embedder.is_none() {
        return Err(Error::invalid("embedding metric requested without an embedder"));
    }
    let mut per_category = BTreeMap::new();
    for cat in &manifest.categories {
        let members: Vec<&ImageRecord> = manifest.active().filter(|r| r.category_id == cat.id).collect();
        let mut entry = CategoryDiversity {
            n_images: members.len(),
            jpeg_bytes: None,
            mean_pairwise_distance: None,
        };
        if opts.metric.jpeg() && !members.is_empty() {
            entry.jpeg_bytes = Some(jpeg_size_metric_from(members.iter().map(|r| load(r)))?);
        }
        if let (Some(embedder), true) = (embedder, opts.metric.embed() && members.len() >= 2) {
            let embeddings = members
                .par_iter()
                .map(|r| embedder.embed(&load(r)?))
                .collect::<Result<Vec<_>>>()?;
            let seed = opts.seed ^ u64::from(cat.id);
            entry.mean_pairwise_distance = Some(mean_pairwise_distance(&embeddings, opts.sample_cap, seed)?);
        }
        per_category.insert(cat.id, entry);
    }
    Ok(DiversityReport::from_categories(per_category))
}
