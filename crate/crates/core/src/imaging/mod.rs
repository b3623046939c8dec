//! Deterministic image primitives shared by every stage.
//!
//! Wherever real-valued arithmetic meets 8-bit samples the result is rounded
//! half-up, so outputs do not depend on platform rounding modes.

mod ljpeg;

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const DEFAULT_MIN_SIDE: u32 = 32;

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelImage {
    width: u32,
    height: u32,
    channels: u8,
    samples: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: u32, height: u32, channels: u8, samples: Vec<u8>) -> Result<Self> {
        check_shape(width, height, channels, samples.len())?;
        Ok(PixelImage {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        let n = width as usize * height as usize * channels as usize;
        PixelImage::new(width, height, channels, vec![value; n]).expect("valid shape")
    }

    pub fn from_fn(width: u32, height: u32, channels: u8, mut f: impl FnMut(u32, u32, u8) -> u8) -> Self {
        let mut samples = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    samples.push(f(x, y, c));
                }
            }
        }
        PixelImage::new(width, height, channels, samples).expect("valid shape")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.samples[(y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize]
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            samples: self.samples.iter().map(|&s| f64::from(s)).collect(),
        }
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> PixelImage {
        PixelImage::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, y, c)
        })
    }
}

/// Real-valued counterpart of [`PixelImage`], used for averaging and transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    width: u32,
    height: u32,
    channels: u8,
    samples: Vec<f64>,
}

impl RealImage {
    pub fn new(width: u32, height: u32, channels: u8, samples: Vec<f64>) -> Result<Self> {
        check_shape(width, height, channels, samples.len())?;
        Ok(RealImage {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> f64 {
        self.samples[(y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize]
    }

    /// Rounds half-up and clamps to 8 bits.
    pub fn to_pixels(&self) -> PixelImage {
        PixelImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            samples: self.samples.iter().map(|&v| round_to_u8(v)).collect(),
        }
    }
}

fn check_shape(width: u32, height: u32, channels: u8, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("empty image {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Shape(format!("unsupported channel count {channels}")));
    }
    let expected = width as usize * height as usize * channels as usize;
    if len != expected {
        return Err(Error::Shape(format!(
            "{width}x{height}x{channels} needs {expected} samples, got {len}"
        )));
    }
    Ok(())
}

#[inline]
pub fn round_to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    Truncated,
    Undersized,
    Undecodable,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Truncated => "truncated",
            RejectReason::Undersized => "undersized",
            RejectReason::Undecodable => "undecodable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Rejection {
            reason,
            detail: detail.into(),
        }
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Jpeg,
    Png,
}

fn sniff(bytes: &[u8]) -> Option<Container> {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(Container::Jpeg)
    } else if bytes.starts_with(PNG_MAGIC) {
        Some(Container::Png)
    } else {
        None
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn rfind(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).rposition(|w| w == needle)
}

/// A file is structurally complete when its end-of-stream marker is present:
/// EOI after the last scan header for JPEG, the IEND chunk for PNG.
fn is_complete(bytes: &[u8], container: Container) -> bool {
    match container {
        Container::Jpeg => {
            let Some(sos) = rfind(bytes, &[0xFF, 0xDA]) else {
                return false;
            };
            find(&bytes[sos..], &[0xFF, 0xD9]).is_some()
        }
        Container::Png => find(&bytes[PNG_MAGIC.len()..], b"IEND").is_some(),
    }
}

/// Decodes JPEG or PNG bytes and checks the minimum side length.
///
/// Grayscale sources stay single-channel; everything else becomes RGB with
/// any alpha dropped.
pub fn decode_and_validate(bytes: &[u8], min_side: u32) -> Result<PixelImage, Rejection> {
    let container = sniff(bytes)
        .ok_or_else(|| Rejection::new(RejectReason::Undecodable, "not a JPEG or PNG stream"))?;
    if !is_complete(bytes, container) {
        return Err(Rejection::new(RejectReason::Truncated, "end-of-image marker missing"));
    }
    let img = match container {
        Container::Jpeg => decode_jpeg(bytes)?,
        Container::Png => decode_png(bytes)?,
    };
    if img.width < min_side || img.height < min_side {
        return Err(Rejection::new(
            RejectReason::Undersized,
            format!("{}x{} below {min_side}x{min_side}", img.width, img.height),
        ));
    }
    Ok(img)
}

fn decode_jpeg(bytes: &[u8]) -> Result<PixelImage, Rejection> {
    use jpeg_decoder::PixelFormat;

    let mut decoder = jpeg_decoder::Decoder::new(Cursor::new(bytes));
    let data = decoder.decode().map_err(|e| {
        let reason = match &e {
            jpeg_decoder::Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                RejectReason::Truncated
            }
            _ => RejectReason::Undecodable,
        };
        Rejection::new(reason, e.to_string())
    })?;
    let info = decoder
        .info()
        .ok_or_else(|| Rejection::new(RejectReason::Undecodable, "missing frame header"))?;
    let (w, h) = (u32::from(info.width), u32::from(info.height));
    let (channels, samples) = match info.pixel_format {
        PixelFormat::L8 => (1, data),
        PixelFormat::L16 => (1, data.chunks_exact(2).map(|p| p[0]).collect()),
        PixelFormat::RGB24 => (3, data),
        PixelFormat::CMYK32 => (
            3,
            data.chunks_exact(4)
                .flat_map(|p| {
                    let k = u32::from(p[3]);
                    [p[0], p[1], p[2]].map(|v| (u32::from(v) * k / 255) as u8)
                })
                .collect(),
        ),
    };
    PixelImage::new(w, h, channels, samples)
        .map_err(|e| Rejection::new(RejectReason::Undecodable, e.to_string()))
}

fn decode_png(bytes: &[u8]) -> Result<PixelImage, Rejection> {
    let dynamic = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| {
        let reason = match &e {
            image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                RejectReason::Truncated
            }
            _ => RejectReason::Undecodable,
        };
        Rejection::new(reason, e.to_string())
    })?;
    Ok(from_dynamic(dynamic))
}

fn from_dynamic(dynamic: DynamicImage) -> PixelImage {
    let gray = matches!(
        dynamic,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = dynamic.to_luma8();
        let (w, h) = buf.dimensions();
        PixelImage::new(w, h, 1, buf.into_raw()).expect("decoder shape")
    } else {
        let buf = dynamic.to_rgb8();
        let (w, h) = buf.dimensions();
        PixelImage::new(w, h, 3, buf.into_raw()).expect("decoder shape")
    }
}

/// Reads and decodes an image file without a size floor.
pub fn load_image(path: &Path) -> Result<PixelImage> {
    let bytes = fsutil::read(path)?;
    decode_and_validate(&bytes, 1)
        .map_err(|r| Error::Codec(format!("{}: {} ({})", path.display(), r.reason.as_str(), r.detail)))
}

/// BT.601 luma, rounded half-up. Identity on single-channel images.
pub fn to_grayscale(img: &PixelImage) -> PixelImage {
    if img.channels == 1 {
        return img.clone();
    }
    let samples = img
        .samples
        .chunks_exact(3)
        .map(|p| {
            round_to_u8(0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        })
        .collect();
    PixelImage {
        width: img.width,
        height: img.height,
        channels: 1,
        samples,
    }
}

/// Replicates a gray channel into RGB; identity on RGB images.
pub fn to_rgb(img: &PixelImage) -> PixelImage {
    if img.channels == 3 {
        return img.clone();
    }
    PixelImage {
        width: img.width,
        height: img.height,
        channels: 3,
        samples: img.samples.iter().flat_map(|&s| [s, s, s]).collect(),
    }
}

/// Source coordinate taps for one output axis: (lower index, upper index, weight of upper).
fn bilinear_taps(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    let max = f64::from(src - 1);
    (0..dst)
        .map(|i| {
            let pos = ((f64::from(i) + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = pos.floor();
            let hi = (lo + 1.0).min(max);
            (lo as usize, hi as usize, pos - lo)
        })
        .collect()
}

fn resize_with(
    width: u32,
    height: u32,
    channels: u8,
    w: u32,
    h: u32,
    sample: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let xs = bilinear_taps(width, w);
    let ys = bilinear_taps(height, h);
    let (sw, nc) = (width as usize, channels as usize);
    let mut out = Vec::with_capacity(w as usize * h as usize * nc);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..nc {
                let at = |x: usize, y: usize| sample((y * sw + x) * nc + c);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Bilinear resampling with half-pixel centers, edges clamped.
pub fn resize_bilinear(img: &PixelImage, w: u32, h: u32) -> PixelImage {
    assert!(w >= 1 && h >= 1, "target size must be positive");
    if (w, h) == (img.width, img.height) {
        return img.clone();
    }
    let samples = resize_with(img.width, img.height, img.channels, w, h, |i| {
        f64::from(img.samples[i])
    });
    PixelImage {
        width: w,
        height: h,
        channels: img.channels,
        samples: samples.into_iter().map(round_to_u8).collect(),
    }
}

/// Real-valued bilinear resampling (no rounding).
pub fn resize_real(img: &RealImage, w: u32, h: u32) -> RealImage {
    assert!(w >= 1 && h >= 1, "target size must be positive");
    let samples = resize_with(img.width, img.height, img.channels, w, h, |i| img.samples[i]);
    RealImage {
        width: w,
        height: h,
        channels: img.channels,
        samples,
    }
}

/// Per-sample arithmetic mean, rounded half-up. All inputs must share one shape.
pub fn average_image(imgs: &[PixelImage]) -> Result<PixelImage> {
    let mut acc = AverageAccumulator::default();
    for img in imgs {
        acc.add(img)?;
    }
    acc.finish()
}

/// Streaming form of [`average_image`].
#[derive(Debug, Clone, Default)]
pub struct AverageAccumulator {
    shape: Option<(u32, u32, u8)>,
    sums: Vec<u64>,
    count: u64,
}

impl AverageAccumulator {
    pub fn add(&mut self, img: &PixelImage) -> Result<()> {
        let shape = (img.width, img.height, img.channels);
        match self.shape {
            None => {
                self.shape = Some(shape);
                self.sums = vec![0; img.samples.len()];
            }
            Some(s) if s != shape => {
                return Err(Error::Shape(format!(
                    "cannot average {}x{}x{} with {}x{}x{}",
                    shape.0, shape.1, shape.2, s.0, s.1, s.2
                )));
            }
            Some(_) => {}
        }
        for (s, &v) in self.sums.iter_mut().zip(&img.samples) {
            *s += u64::from(v);
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(self) -> Result<PixelImage> {
        let (width, height, channels) = self
            .shape
            .ok_or_else(|| Error::invalid("average of an empty image list"))?;
        // floor((2*sum + n) / 2n) is the exact half-up rounding of sum / n.
        let n = self.count;
        let samples = self
            .sums
            .into_iter()
            .map(|s| ((2 * s + n) / (2 * n)).min(255) as u8)
            .collect();
        Ok(PixelImage {
            width,
            height,
            channels,
            samples,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LosslessCodec {
    #[default]
    Jpeg,
    Png,
}

impl std::str::FromStr for LosslessCodec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg" | "ljpeg" => Ok(LosslessCodec::Jpeg),
            "png" => Ok(LosslessCodec::Png),
            other => Err(Error::invalid(format!("unknown lossless codec {other:?}"))),
        }
    }
}

/// Lossless JPEG encoding; see [`encode_lossless_with`] for other codecs.
pub fn encode_lossless(img: &PixelImage) -> Result<Vec<u8>> {
    encode_lossless_with(img, LosslessCodec::Jpeg)
}

pub fn encode_lossless_with(img: &PixelImage, codec: LosslessCodec) -> Result<Vec<u8>> {
    match codec {
        LosslessCodec::Jpeg => ljpeg::encode(img),
        LosslessCodec::Png => {
            use image::codecs::png::{CompressionType, FilterType, PngEncoder};
            use image::{ExtendedColorType, ImageEncoder};

            let mut out = Vec::new();
            let color = if img.channels == 1 {
                ExtendedColorType::L8
            } else {
                ExtendedColorType::Rgb8
            };
            PngEncoder::new_with_quality(&mut out, CompressionType::Best, FilterType::Adaptive)
                .write_image(&img.samples, img.width, img.height, color)
                .map_err(|e| Error::Codec(e.to_string()))?;
            Ok(out)
        }
    }
}

/// Baseline (lossy) JPEG at the given quality.
pub fn encode_jpeg(img: &PixelImage, quality: u8) -> Result<Vec<u8>> {
    use image::codecs::jpeg::JpegEncoder;
    use image::{ExtendedColorType, ImageEncoder};

    let mut out = Vec::new();
    let color = if img.channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    JpegEncoder::new_with_quality(&mut out, quality)
        .write_image(&img.samples, img.width, img.height, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, c: u8, seed: u64) -> PixelImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PixelImage::from_fn(w, h, c, |_, _, _| rng.random())
    }

    #[test]
    fn shape_is_checked() {
        assert!(PixelImage::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(PixelImage::new(0, 2, 1, vec![]).is_err());
        assert!(PixelImage::new(2, 2, 2, vec![0; 8]).is_err());
    }

    #[test]
    fn boundary_size_is_accepted_and_below_is_undersized() {
        let ok = encode_lossless(&noise(32, 32, 3, 1)).unwrap();
        assert!(decode_and_validate(&ok, 32).is_ok());
        let small = encode_lossless_with(&noise(31, 40, 3, 2), LosslessCodec::Png).unwrap();
        assert_eq!(
            decode_and_validate(&small, 32).unwrap_err().reason,
            RejectReason::Undersized
        );
    }

    #[test]
    fn half_truncated_files_are_truncated() {
        let img = noise(48, 40, 3, 3);
        for bytes in [
            encode_jpeg(&img, 90).unwrap(),
            encode_lossless(&img).unwrap(),
            encode_lossless_with(&img, LosslessCodec::Png).unwrap(),
        ] {
            let cut = &bytes[..bytes.len() / 2];
            assert_eq!(
                decode_and_validate(cut, 32).unwrap_err().reason,
                RejectReason::Truncated
            );
        }
    }

    #[test]
    fn garbage_is_undecodable() {
        let r = decode_and_validate(b"GIF89a....", 1).unwrap_err();
        assert_eq!(r.reason, RejectReason::Undecodable);
    }

    #[test]
    fn grayscale_weights() {
        let px = |r, g, b| to_grayscale(&PixelImage::new(1, 1, 3, vec![r, g, b]).unwrap()).samples[0];
        assert_eq!(px(255, 255, 255), 255);
        assert_eq!(px(255, 0, 0), 76);
        assert_eq!(px(0, 255, 0), 150);
        assert_eq!(px(0, 0, 255), 29);
        let gray = noise(5, 4, 1, 9);
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = PixelImage::filled(13, 7, 3, 128);
        for (w, h) in [(1, 1), (8, 8), (9, 8), (32, 32), (100, 3)] {
            let r = resize_bilinear(&img, w, h);
            assert!(r.samples.iter().all(|&s| s == 128), "{w}x{h}");
        }
    }

    #[test]
    fn upscaled_ramp_is_monotone() {
        let img = PixelImage::new(2, 1, 1, vec![0, 255]).unwrap();
        let r = resize_bilinear(&img, 4, 1);
        assert!(r.samples.windows(2).all(|w| w[0] <= w[1]), "{:?}", r.samples);
        assert_eq!(r.samples, vec![0, 64, 191, 255]);
    }

    /// Independent resampler: evaluates the bilinear surface at each output
    /// center by explicit neighbour weights, written without the tap tables.
    fn oracle_resize(img: &PixelImage, w: u32, h: u32) -> Vec<f64> {
        let (sw, sh) = (img.width as f64, img.height as f64);
        let mut out = Vec::new();
        for oy in 0..h {
            for ox in 0..w {
                let sx = ((ox as f64 + 0.5) * sw / w as f64 - 0.5).max(0.0).min(sw - 1.0);
                let sy = ((oy as f64 + 0.5) * sh / h as f64 - 0.5).max(0.0).min(sh - 1.0);
                for c in 0..img.channels {
                    let mut acc = 0.0;
                    for yy in 0..img.height {
                        let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                        if wy == 0.0 {
                            continue;
                        }
                        for xx in 0..img.width {
                            let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                            acc += wx * wy * img.get(xx, yy, c) as f64;
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn downscale_matches_oracle_resampler() {
        for seed in 0..5 {
            let img = noise(37 + seed as u32, 29, 3, seed);
            let r = resize_bilinear(&img, 11, 8);
            let expect = oracle_resize(&img, 11, 8);
            for (a, b) in r.samples.iter().zip(&expect) {
                assert!((f64::from(*a) - b).abs() <= 1.0, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn average_black_white_is_128() {
        let avg = average_image(&[
            PixelImage::filled(4, 4, 3, 0),
            PixelImage::filled(4, 4, 3, 255),
        ])
        .unwrap();
        assert!(avg.samples.iter().all(|&s| s == 128));
    }

    #[test]
    fn average_identity_and_permutation() {
        let imgs: Vec<_> = (0..4).map(|s| noise(6, 5, 3, s)).collect();
        assert_eq!(average_image(&imgs[..1]).unwrap(), imgs[0]);
        let mut rev = imgs.clone();
        rev.reverse();
        assert_eq!(average_image(&imgs).unwrap(), average_image(&rev).unwrap());
        assert!(average_image(&[]).is_err());
        assert!(average_image(&[noise(6, 5, 3, 0), noise(5, 6, 3, 0)]).is_err());
    }

    #[test]
    fn lossless_round_trip_is_exact() {
        for seed in 0..10u64 {
            let channels = if seed % 3 == 0 { 1 } else { 3 };
            let img = noise(17 + seed as u32 * 3, 9 + seed as u32, channels, seed);
            for codec in [LosslessCodec::Jpeg, LosslessCodec::Png] {
                let bytes = encode_lossless_with(&img, codec).unwrap();
                assert_eq!(bytes, encode_lossless_with(&img, codec).unwrap());
                assert_eq!(decode_and_validate(&bytes, 1).unwrap(), img, "{codec:?} seed {seed}");
            }
        }
    }

    #[test]
    fn constant_image_compresses_better_than_noise() {
        let flat = encode_lossless(&PixelImage::filled(64, 64, 3, 77)).unwrap();
        let busy = encode_lossless(&noise(64, 64, 3, 4)).unwrap();
        assert!(flat.len() < busy.len(), "{} vs {}", flat.len(), busy.len());
    }
}
