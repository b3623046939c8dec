//! Seeded synthetic images for examples, tests and benchmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fsutil;
use crate::imaging::{encode_jpeg, encode_lossless_with, round_to_u8, LosslessCodec, PixelImage};
use crate::pipeline::CategoryInput;

/// Classes of [`textured_blob`]: the texture inside the blob.
pub const TEXTURES: [&str; 3] = ["horizontal", "vertical", "checker"];

/// A blob on a random background, carrying a faint texture whose pattern is
/// the class. The blob is dominated by one colour channel chosen at random;
/// colours, blob size, position and texture phase are all nuisance, and the
/// texture contrast is small next to them. Every pattern survives horizontal
/// flips.
pub fn textured_blob(class: usize, side: u32, rng: &mut impl Rng) -> PixelImage {
    let hue = rng.random_range(0..3);
    let bg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let mut fg = [0.0; 3];
    for (c, v) in fg.iter_mut().enumerate() {
        *v = if c == hue { rng.random_range(0.6..1.0) } else { rng.random_range(0.0..0.35) };
    }
    let s = f64::from(side);
    let r = rng.random_range(0.3..0.45) * s;
    let (cx, cy) = (rng.random_range(r..s - r), rng.random_range(r..s - r));
    let tex = Texture::random(class % TEXTURES.len(), 8, rng);
    let amp = 0.07;
    PixelImage::from_fn(side, side, 3, |x, y, c| {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let v = if (fx - cx).powi(2) + (fy - cy).powi(2) <= r * r {
            let on = if tex.on(x, y) { 2.0 * amp } else { 0.0 };
            fg[c as usize] * (1.0 - 2.0 * amp) + on
        } else {
            bg[c as usize]
        };
        round_to_u8(v * 255.0)
    })
}

#[derive(Clone, Copy)]
struct Texture {
    pattern: usize,
    period: u32,
    phase: (u32, u32),
}

impl Texture {
    fn random(pattern: usize, period: u32, rng: &mut impl Rng) -> Self {
        Texture {
            pattern,
            period,
            phase: (rng.random_range(0..period), rng.random_range(0..period)),
        }
    }

    fn on(&self, x: u32, y: u32) -> bool {
        let half = self.period / 2;
        let hx = ((x + self.phase.0) / half) % 2 == 0;
        let hy = ((y + self.phase.1) / half) % 2 == 0;
        match self.pattern {
            0 => hy,
            1 => hx,
            _ => hx ^ hy,
        }
    }
}

/// `n` images cycling through the three texture classes.
pub fn textured_blob_set(n: usize, side: u32, seed: u64) -> (Vec<PixelImage>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % TEXTURES.len();
            (textured_blob(c, side, &mut rng), c)
        })
        .unzip()
}

/// Photo stand-in: a gradient and a few discs for large-scale structure,
/// plus fine grain like the surface texture of food. The structure makes it
/// distinctive under every hash; the grain keeps it hard to compress.
pub fn structured_image(side: u32, seed: u64) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = f64::from(side);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(0.08..0.3) * s,
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let freq = rng.random_range(1.0..4.0);
    let grain: Vec<f64> = (0..side * side * 3).map(|_| rng.random_range(-0.2..0.2)).collect();
    PixelImage::from_fn(side, side, 3, |x, y, c| {
        let (fx, fy) = (f64::from(x) / s, f64::from(y) / s);
        let mut v = 0.5 + 0.4 * ((fx * ca + fy * sa) * freq * std::f64::consts::PI).sin();
        for &(dx, dy, r, col) in &discs {
            if (f64::from(x) - dx).powi(2) + (f64::from(y) - dy).powi(2) < r * r {
                v = col[c as usize];
            }
        }
        let g = grain[((y * side + x) * 3 + u32::from(c)) as usize];
        round_to_u8((v * 0.6 + 0.2 + g) * 255.0)
    })
}

/// Independent uniform noise.
pub fn noise_image(side: u32, seed: u64) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PixelImage::from_fn(side, side, 3, |_, _, _| rng.random())
}

/// A light edit of `img`: a few pixels nudged and a thin border tinted, the
/// kind of difference a re-encoded or re-uploaded copy shows.
pub fn near_copy(img: &PixelImage, seed: u64) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (img.width(), img.height());
    let jitter: Vec<i16> = (0..img.samples().len()).map(|_| rng.random_range(-3..=3)).collect();
    PixelImage::from_fn(w, h, img.channels(), |x, y, c| {
        let i = ((y * w + x) * u32::from(img.channels()) + u32::from(c)) as usize;
        let v = i16::from(img.get(x, y, c)) + jitter[i];
        v.clamp(0, 255) as u8
    })
}

/// What [`write_corpus`] puts in each category directory.
#[derive(Debug, Clone)]
pub struct CorpusPlan {
    pub categories: Vec<String>,
    /// Distinct good images per category, alternating PNG and baseline JPEG.
    pub unique: usize,
    /// Byte-identical copies of earlier images.
    pub exact_copies: usize,
    /// Lightly edited re-encodings of earlier images.
    pub near_copies: usize,
    /// JPEG files cut short.
    pub truncated: usize,
    /// Images smaller than `small_side`.
    pub undersized: usize,
    /// Noise images named `nonfood_*`.
    pub non_food: usize,
    pub side: u32,
    pub small_side: u32,
    pub seed: u64,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        CorpusPlan {
            categories: vec!["laksa".into(), "satay".into(), "kaya_toast".into()],
            unique: 8,
            exact_copies: 1,
            near_copies: 1,
            truncated: 1,
            undersized: 1,
            non_food: 2,
            side: 64,
            small_side: 16,
            seed: 7,
        }
    }
}

/// Writes a raw category-per-directory corpus under `root` and returns the
/// matching pipeline inputs. Each category also gets one file that is not
/// an image at all.
pub fn write_corpus(root: &Path, plan: &CorpusPlan) -> Result<Vec<CategoryInput>> {
    let mut out = Vec::new();
    for (ci, name) in plan.categories.iter().enumerate() {
        let dir = root.join(name);
        let seed = plan.seed.wrapping_mul(1000).wrapping_add(ci as u64 * 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let write = |file: String, bytes: &[u8]| -> Result<PathBuf> {
            let p = dir.join(file);
            fsutil::write_atomic(&p, bytes)?;
            Ok(p)
        };
        let mut originals = Vec::new();
        for i in 0..plan.unique {
            let img = structured_image(plan.side, rng.random());
            let (ext, bytes) = if i % 2 == 0 {
                ("png", encode_lossless_with(&img, LosslessCodec::Png)?)
            } else {
                ("jpg", encode_jpeg(&img, 92)?)
            };
            write(format!("img_{i:03}.{ext}"), &bytes)?;
            originals.push((img, ext, bytes));
        }
        for i in 0..plan.exact_copies {
            let (_, ext, bytes) = &originals[i % originals.len()];
            write(format!("copy_{i:03}.{ext}"), bytes)?;
        }
        for i in 0..plan.near_copies {
            let (img, _, _) = &originals[(i + 1) % originals.len()];
            let bytes = encode_lossless_with(&near_copy(img, rng.random()), LosslessCodec::Png)?;
            write(format!("near_{i:03}.png"), &bytes)?;
        }
        for i in 0..plan.truncated {
            let bytes = encode_jpeg(&structured_image(plan.side, rng.random()), 92)?;
            write(format!("cut_{i:03}.jpg"), &bytes[..bytes.len() / 2])?;
        }
        for i in 0..plan.undersized {
            let img = structured_image(plan.small_side, rng.random());
            write(format!("small_{i:03}.png"), &encode_lossless_with(&img, LosslessCodec::Png)?)?;
        }
        for i in 0..plan.non_food {
            let img = noise_image(plan.side, rng.random());
            write(format!("nonfood_{i:03}.png"), &encode_lossless_with(&img, LosslessCodec::Png)?)?;
        }
        write("notes.txt".into(), format!("notes for {name}\n").as_bytes())?;
        out.push(CategoryInput {
            name: name.clone(),
            root: dir,
            group: String::new(),
            synonyms: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_sets_repeat() {
        let (a, la) = textured_blob_set(6, 16, 1);
        let (b, lb) = textured_blob_set(6, 16, 1);
        assert_eq!(a, b);
        assert_eq!(la, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(la, lb);
    }

    #[test]
    fn near_copy_stays_close() {
        let img = structured_image(32, 4);
        let c = near_copy(&img, 5);
        let max = img.samples().iter().zip(c.samples()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
        assert!(max <= 3);
        assert_ne!(noise_image(8, 1), noise_image(8, 2));
    }
}
