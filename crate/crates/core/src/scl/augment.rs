//! Seeded view generation for the multiview batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_real, RealImage};

/// One stochastic transform: random square crop covering an area fraction in
/// `crop_scale`, resized back to full size; horizontal flip with probability
/// `flip_prob`; brightness multiplied by a factor in `[1 - b, 1 + b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    pub brightness: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            crop_scale: (0.6, 1.0),
            flip_prob: 0.5,
            brightness: 0.2,
        }
    }
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("bad crop scale range {lo}..{hi}")));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..1.0).contains(&self.brightness) {
            return Err(Error::invalid("flip probability or brightness out of range"));
        }
        Ok(())
    }

    pub fn apply(&self, img: &RealImage, rng: &mut ChaCha8Rng) -> RealImage {
        let (w, h, nc) = (img.width(), img.height(), img.channels());
        let (lo, hi) = self.crop_scale;
        let area = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let cw = ((area.sqrt() * f64::from(w)).round() as u32).clamp(1, w);
        let ch = ((area.sqrt() * f64::from(h)).round() as u32).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        let flip = rng.random_bool(self.flip_prob);
        let factor = if self.brightness > 0.0 {
            1.0 + rng.random_range(-self.brightness..=self.brightness)
        } else {
            1.0
        };

        let mut out = if (cw, ch) == (w, h) {
            img.clone()
        } else {
            let mut crop = Vec::with_capacity((cw * ch) as usize * nc as usize);
            for y in y0..y0 + ch {
                for x in x0..x0 + cw {
                    for c in 0..nc {
                        crop.push(img.get(x, y, c));
                    }
                }
            }
            let crop = RealImage::new(cw, ch, nc, crop).expect("crop shape");
            resize_real(&crop, w, h)
        };
        if flip {
            let src = out.clone();
            let samples = out.samples_mut();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..nc {
                        samples[((y * w + x) * u32::from(nc) + u32::from(c)) as usize] = src.get(w - 1 - x, y, c);
                    }
                }
            }
        }
        if factor != 1.0 {
            for v in out.samples_mut() {
                *v = (*v * factor).clamp(0.0, 1.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AugmentationPair {
    pub first: Augmentation,
    pub second: Augmentation,
}

impl AugmentationPair {
    pub fn identity() -> Self {
        AugmentationPair {
            first: Augmentation::identity(),
            second: Augmentation::identity(),
        }
    }
}

/// Independent stream per (seed, sample index, view).
pub fn view_rng(seed: u64, index: usize, view: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 1) | u64::from(view));
    rng
}

/// 2N views: view `i` is `first(x_i)` and view `i + N` is `second(x_i)`, so the
/// sibling map is `pair[i] = (i + N) mod 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewBatch {
    pub views: Vec<RealImage>,
    pub labels: Vec<usize>,
    pub pair: Vec<usize>,
}

impl MultiviewBatch {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// `P(i)`: every other view with the same label.
    pub fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&p| p != i && self.labels[p] == self.labels[i])
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || n % 2 != 0 || self.labels.len() != n || self.pair.len() != n {
            return Err(Error::invalid("multiview batch must hold an even, non-zero number of views"));
        }
        for i in 0..n {
            let j = self.pair[i];
            if j >= n || j == i || self.pair[j] != i || self.labels[j] != self.labels[i] {
                return Err(Error::invalid(format!("view {i} is not paired correctly")));
            }
        }
        Ok(())
    }
}

pub fn make_multiview_batch(
    samples: &[&RealImage],
    labels: &[usize],
    aug: &AugmentationPair,
    seed: u64,
) -> Result<MultiviewBatch> {
    if samples.is_empty() {
        return Err(Error::invalid("multiview batch from zero samples"));
    }
    if samples.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} samples with {} labels",
            samples.len(),
            labels.len()
        )));
    }
    aug.first.validate()?;
    aug.second.validate()?;
    let n = samples.len();
    let mut views = Vec::with_capacity(2 * n);
    for (i, s) in samples.iter().enumerate() {
        views.push(aug.first.apply(s, &mut view_rng(seed, i, 0)));
    }
    for (i, s) in samples.iter().enumerate() {
        views.push(aug.second.apply(s, &mut view_rng(seed, i, 1)));
    }
    let batch = MultiviewBatch {
        views,
        labels: labels.iter().chain(labels).copied().collect(),
        pair: (0..2 * n).map(|i| (i + n) % (2 * n)).collect(),
    };
    debug_assert!(batch.check().is_ok());
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::new(12, 10, 3, (0..360).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn single_sample_gives_swapped_pair() {
        let x = img(0);
        let b = make_multiview_batch(&[&x], &[4], &AugmentationPair::default(), 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.pair, vec![1, 0]);
        assert_eq!(b.labels, vec![4, 4]);
        assert_eq!(b.positives(0), vec![1]);
    }

    #[test]
    fn identity_views_equal_source() {
        let (a, c) = (img(1), img(2));
        let b = make_multiview_batch(&[&a, &c], &[0, 1], &AugmentationPair::identity(), 9).unwrap();
        assert_eq!(b.views[0], a);
        assert_eq!(b.views[2], a);
        assert_eq!(b.views[1], c);
        assert_eq!(b.views[3], c);
    }

    #[test]
    fn same_seed_same_batch() {
        let xs: Vec<RealImage> = (0..4).map(img).collect();
        let refs: Vec<&RealImage> = xs.iter().collect();
        let labels = [0, 1, 0, 1];
        let aug = AugmentationPair::default();
        let a = make_multiview_batch(&refs, &labels, &aug, 42).unwrap();
        let b = make_multiview_batch(&refs, &labels, &aug, 42).unwrap();
        assert_eq!(a, b);
        let c = make_multiview_batch(&refs, &labels, &aug, 43).unwrap();
        assert_ne!(a, c);
        a.check().unwrap();
    }

    #[test]
    fn views_stay_in_unit_range() {
        let x = img(3);
        let aug = Augmentation::default();
        for s in 0..20 {
            let v = aug.apply(&x, &mut view_rng(s, 0, 0));
            assert!(v.samples().iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert_eq!((v.width(), v.height()), (12, 10));
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(make_multiview_batch(&[], &[], &AugmentationPair::default(), 0).is_err());
    }
}
