//! Small convolutional encoder, projection MLP and linear head with manual backprop.
//!
//! Activations are channel-major `(c, h, w)` vectors. Each layer's gradient
//! buffer has the same type as the layer itself, so parameter updates are a
//! zip over matching slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{normalize_backward, norm, Matrix};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, to_rgb, PixelImage, RealImage};

/// Anything with a flat list of parameter slices.
pub trait Params {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn add_from(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Plain SGD with L2 weight decay: `p -= lr * (g + wd * p)`.
    fn sgd_step(&mut self, grads: &Self, lr: f64, weight_decay: f64) {
        for (p, g) in self.params_mut().into_iter().zip(grads.params()) {
            for (w, d) in p.iter_mut().zip(g) {
                *w -= lr * (d + weight_decay * *w);
            }
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 3x3 convolution, padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_channels * 9) as f64;
        Conv2d {
            in_channels,
            out_channels,
            stride,
            weight: uniform_init(rng, out_channels * in_channels * 9, (6.0 / fan_in).sqrt()),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_size(h, w);
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let kernel = &self.weight[(oc * self.in_channels + ic) * 9..][..9];
                let src = &input[ic * h * w..(ic + 1) * h * w];
                for oy in 0..oh {
                    let cy = (oy * self.stride) as isize;
                    for ox in 0..ow {
                        let cx = (ox * self.stride) as isize;
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            let y = cy + ky as isize - 1;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let row = &src[y as usize * w..][..w];
                            for kx in 0..3 {
                                let x = cx + kx as isize - 1;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                acc += kernel[ky * 3 + kx] * row[x as usize];
                            }
                        }
                        plane[oy * ow + ox] += acc;
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient
    /// when `want_input` is set.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grads: &mut Conv2d,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (oh, ow) = self.output_size(h, w);
        let mut grad_in = want_input.then(|| vec![0.0; self.in_channels * h * w]);
        for oc in 0..self.out_channels {
            let go = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            grads.bias[oc] += go.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let kidx = (oc * self.in_channels + ic) * 9;
                let src = &input[ic * h * w..(ic + 1) * h * w];
                let mut gk = [0.0; 9];
                for oy in 0..oh {
                    let cy = (oy * self.stride) as isize;
                    for ox in 0..ow {
                        let g = go[oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        let cx = (ox * self.stride) as isize;
                        for ky in 0..3 {
                            let y = cy + ky as isize - 1;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let x = cx + kx as isize - 1;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                let at = y as usize * w + x as usize;
                                gk[ky * 3 + kx] += g * src[at];
                                if let Some(gi) = grad_in.as_mut() {
                                    gi[ic * h * w + at] += g * self.weight[kidx + ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
                for (a, b) in grads.weight[kidx..kidx + 9].iter_mut().zip(gk) {
                    *a += b;
                }
            }
        }
        grad_in
    }
}

impl Params for Conv2d {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Affine map, weight stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: uniform_init(rng, in_dim * out_dim, (6.0 / in_dim as f64).sqrt()),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.in_dim, self.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                self.weight[o * self.in_dim..(o + 1) * self.in_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.bias[o]
            })
            .collect()
    }

    pub fn backward(&self, x: &[f64], grad_y: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for (o, &g) in grad_y.iter().enumerate() {
            grads.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderShape {
    pub input_side: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub embed_dim: usize,
}

/// Image -> R^{d_e}: two stride-2 conv+ReLU blocks, global average pool, linear.
/// Callers see unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input_side: usize,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
}

/// Intermediate values of one encoder forward pass.
pub struct EncoderTrace {
    input: Vec<f64>,
    act1: Vec<f64>,
    act2: Vec<f64>,
    pooled: Vec<f64>,
    raw_norm: f64,
    pub embedding: Vec<f64>,
}

impl Encoder {
    pub fn new(shape: EncoderShape, rng: &mut ChaCha8Rng) -> Self {
        Encoder {
            input_side: shape.input_side,
            conv1: Conv2d::new(3, shape.conv1_channels, 2, rng),
            conv2: Conv2d::new(shape.conv1_channels, shape.conv2_channels, 2, rng),
            fc: Linear::new(shape.conv2_channels, shape.embed_dim, rng),
        }
    }

    pub fn seeded(shape: EncoderShape, seed: u64) -> Self {
        Encoder::new(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            input_side: self.input_side,
            conv1_channels: self.conv1.out_channels,
            conv2_channels: self.conv2.out_channels,
            embed_dim: self.fc.out_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.fc.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            input_side: self.input_side,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            fc: self.fc.zeros_like(),
        }
    }

    fn check_input(&self, image: &RealImage) -> Result<()> {
        let side = self.input_side;
        if (image.width() as usize, image.height() as usize, image.channels()) != (side, side, 3) {
            return Err(Error::Shape(format!(
                "encoder expects {side}x{side}x3 input, got {}x{}x{}",
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        Ok(())
    }

    /// Channel-major planes, each centred on its own mean.
    fn input_planes(&self, image: &RealImage) -> Vec<f64> {
        let side = self.input_side;
        let mut input = vec![0.0; 3 * side * side];
        for (i, px) in image.samples().chunks_exact(3).enumerate() {
            for c in 0..3 {
                input[c * side * side + i] = px[c];
            }
        }
        for plane in input.chunks_exact_mut(side * side) {
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            plane.iter_mut().for_each(|v| *v -= mean);
        }
        input
    }

    /// Data-dependent initialization: rescales and shifts every layer so its
    /// pre-activations have zero mean and unit variance per channel over
    /// `images`. Leaves the layer untouched where the variance vanishes.
    pub fn standardize(&mut self, images: &[RealImage]) -> Result<()> {
        if images.is_empty() {
            return Ok(());
        }
        for img in images {
            self.check_input(img)?;
        }
        let side = self.input_side;
        let (h1, w1) = self.conv1.output_size(side, side);
        let (h2, w2) = self.conv2.output_size(h1, w1);
        let inputs: Vec<Vec<f64>> = images.iter().map(|i| self.input_planes(i)).collect();

        let pre1: Vec<Vec<f64>> = inputs.iter().map(|x| self.conv1.forward(x, side, side)).collect();
        standardize_channels(&mut self.conv1.weight, &mut self.conv1.bias, &pre1, h1 * w1);
        let act1: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| {
                let mut a = self.conv1.forward(x, side, side);
                relu_in_place(&mut a);
                a
            })
            .collect();

        let pre2: Vec<Vec<f64>> = act1.iter().map(|a| self.conv2.forward(a, h1, w1)).collect();
        standardize_channels(&mut self.conv2.weight, &mut self.conv2.bias, &pre2, h2 * w2);
        let area = (h2 * w2) as f64;
        let pooled: Vec<Vec<f64>> = act1
            .iter()
            .map(|a| {
                let mut b = self.conv2.forward(a, h1, w1);
                relu_in_place(&mut b);
                b.chunks_exact(h2 * w2).map(|p| p.iter().sum::<f64>() / area).collect()
            })
            .collect();

        let raw: Vec<Vec<f64>> = pooled.iter().map(|p| self.fc.forward(p)).collect();
        standardize_channels(&mut self.fc.weight, &mut self.fc.bias, &raw, 1);
        Ok(())
    }

    /// `image` must be 3-channel at `input_side` x `input_side`, values in [0, 1].
    pub fn forward(&self, image: &RealImage) -> Result<EncoderTrace> {
        self.check_input(image)?;
        let side = self.input_side;
        let input = self.input_planes(image);
        let mut act1 = self.conv1.forward(&input, side, side);
        relu_in_place(&mut act1);
        let (h1, w1) = self.conv1.output_size(side, side);
        let mut act2 = self.conv2.forward(&act1, h1, w1);
        relu_in_place(&mut act2);
        let (h2, w2) = self.conv2.output_size(h1, w1);
        let area = (h2 * w2) as f64;
        let pooled: Vec<f64> = act2.chunks_exact(h2 * w2).map(|p| p.iter().sum::<f64>() / area).collect();
        let raw = self.fc.forward(&pooled);
        let raw_norm = norm(&raw);
        if !(raw_norm > 0.0 && raw_norm.is_finite()) {
            return Err(Error::NonFinite("encoder output norm"));
        }
        let embedding = raw.iter().map(|v| v / raw_norm).collect();
        Ok(EncoderTrace {
            input,
            act1,
            act2,
            pooled,
            raw_norm,
            embedding,
        })
    }

    /// Backprop from `dL/de` (normalized embedding) into `grads`.
    pub fn backward(&self, trace: &EncoderTrace, grad_embedding: &[f64], grads: &mut Encoder) {
        let side = self.input_side;
        let mut grad_raw = vec![0.0; grad_embedding.len()];
        normalize_backward(&trace.embedding, trace.raw_norm, grad_embedding, &mut grad_raw);
        let grad_pooled = self.fc.backward(&trace.pooled, &grad_raw, &mut grads.fc);
        let (h1, w1) = self.conv1.output_size(side, side);
        let (h2, w2) = self.conv2.output_size(h1, w1);
        let area = (h2 * w2) as f64;
        let mut grad_act2: Vec<f64> = grad_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / area, h2 * w2))
            .collect();
        relu_backward(&trace.act2, &mut grad_act2);
        let mut grad_act1 = self
            .conv2
            .backward(&trace.act1, h1, w1, &grad_act2, &mut grads.conv2, true)
            .expect("input gradient requested");
        relu_backward(&trace.act1, &mut grad_act1);
        self.conv1
            .backward(&trace.input, side, side, &grad_act1, &mut grads.conv1, false);
    }

    pub fn embed(&self, image: &RealImage) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.embedding)
    }

    /// Resizes any decoded image to the encoder's input and embeds it.
    pub fn embed_pixels(&self, img: &PixelImage) -> Result<Vec<f64>> {
        self.embed(&prepare_image(img, self.input_side))
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let c1 = &self.conv1;
        let c2 = &self.conv2;
        ckpt.push(format!("{prefix}.input_side"), 1, 1, vec![self.input_side as f64]);
        ckpt.push(format!("{prefix}.conv1.weight"), c1.out_channels, c1.in_channels * 9, c1.weight.clone());
        ckpt.push(format!("{prefix}.conv1.bias"), 1, c1.out_channels, c1.bias.clone());
        ckpt.push(format!("{prefix}.conv2.weight"), c2.out_channels, c2.in_channels * 9, c2.weight.clone());
        ckpt.push(format!("{prefix}.conv2.bias"), 1, c2.out_channels, c2.bias.clone());
        write_linear(ckpt, &format!("{prefix}.fc"), &self.fc);
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let input_side = ckpt.get(&format!("{prefix}.input_side"))?.data[0] as usize;
        let conv = |name: &str| -> Result<Conv2d> {
            let w = ckpt.get(&format!("{prefix}.{name}.weight"))?;
            let b = ckpt.get(&format!("{prefix}.{name}.bias"))?;
            if w.cols % 9 != 0 || b.data.len() != w.rows {
                return Err(Error::Checkpoint(format!("bad shape for {prefix}.{name}")));
            }
            Ok(Conv2d {
                in_channels: w.cols / 9,
                out_channels: w.rows,
                stride: 2,
                weight: w.data.clone(),
                bias: b.data.clone(),
            })
        };
        Ok(Encoder {
            input_side,
            conv1: conv("conv1")?,
            conv2: conv("conv2")?,
            fc: read_linear(ckpt, &format!("{prefix}.fc"))?,
        })
    }
}

impl Params for Encoder {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.fc.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}

/// `outputs[n]` holds channel-major activations with `plane` values per
/// channel; the weight rows for each channel are contiguous.
fn standardize_channels(weight: &mut [f64], bias: &mut [f64], outputs: &[Vec<f64>], plane: usize) {
    let channels = bias.len();
    let per = weight.len() / channels;
    for c in 0..channels {
        let vals = outputs.iter().flat_map(|o| &o[c * plane..(c + 1) * plane]);
        let n = (outputs.len() * plane) as f64;
        let mean = vals.clone().sum::<f64>() / n;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 1e-12) {
            continue;
        }
        let sd = var.sqrt();
        weight[c * per..(c + 1) * per].iter_mut().for_each(|w| *w /= sd);
        bias[c] = (bias[c] - mean) / sd;
    }
}

fn write_linear(ckpt: &mut Checkpoint, name: &str, l: &Linear) {
    ckpt.push(format!("{name}.weight"), l.out_dim, l.in_dim, l.weight.clone());
    ckpt.push(format!("{name}.bias"), 1, l.out_dim, l.bias.clone());
}

fn read_linear(ckpt: &Checkpoint, name: &str) -> Result<Linear> {
    let w = ckpt.get(&format!("{name}.weight"))?;
    let b = ckpt.get(&format!("{name}.bias"))?;
    if b.data.len() != w.rows {
        return Err(Error::Checkpoint(format!("bad shape for {name}")));
    }
    Ok(Linear {
        in_dim: w.cols,
        out_dim: w.rows,
        weight: w.data.clone(),
        bias: b.data.clone(),
    })
}

/// Decoded image -> RGB, resized, scaled to [0, 1].
pub fn prepare_image(img: &PixelImage, side: usize) -> RealImage {
    let rgb = resize_bilinear(&to_rgb(img), side as u32, side as u32);
    let samples = rgb.samples().iter().map(|&v| f64::from(v) / 255.0).collect();
    RealImage::new(side as u32, side as u32, 3, samples).expect("shape")
}

/// One-hidden-layer MLP from d_e to d_p; outputs are normalized by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct ProjectionTrace {
    hidden: Vec<f64>,
    raw_norm: f64,
    pub projection: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(embed_dim: usize, hidden_dim: usize, proj_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ProjectionHead {
            hidden: Linear::new(embed_dim, hidden_dim, rng),
            out: Linear::new(hidden_dim, proj_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionHead {
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    pub fn forward(&self, e: &[f64]) -> Result<ProjectionTrace> {
        let mut hidden = self.hidden.forward(e);
        relu_in_place(&mut hidden);
        let raw = self.out.forward(&hidden);
        let raw_norm = norm(&raw);
        if !(raw_norm > 0.0 && raw_norm.is_finite()) {
            return Err(Error::NonFinite("projection output norm"));
        }
        Ok(ProjectionTrace {
            projection: raw.iter().map(|v| v / raw_norm).collect(),
            hidden,
            raw_norm,
        })
    }

    /// Returns `dL/de` given `dL/ds` for the normalized projection.
    pub fn backward(&self, e: &[f64], trace: &ProjectionTrace, grad_s: &[f64], grads: &mut ProjectionHead) -> Vec<f64> {
        let mut grad_raw = vec![0.0; grad_s.len()];
        normalize_backward(&trace.projection, trace.raw_norm, grad_s, &mut grad_raw);
        let mut grad_hidden = self.out.backward(&trace.hidden, &grad_raw, &mut grads.out);
        relu_backward(&trace.hidden, &mut grad_hidden);
        self.hidden.backward(e, &grad_hidden, &mut grads.hidden)
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        write_linear(ckpt, &format!("{prefix}.hidden"), &self.hidden);
        write_linear(ckpt, &format!("{prefix}.out"), &self.out);
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(ProjectionHead {
            hidden: read_linear(ckpt, &format!("{prefix}.hidden"))?,
            out: read_linear(ckpt, &format!("{prefix}.out"))?,
        })
    }
}

impl Params for ProjectionHead {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.hidden.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

/// Linear classifier over embeddings; logits for each class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub linear: Linear,
}

impl LinearHead {
    /// Zero-initialized, so every class starts equally likely.
    pub fn new(embed_dim: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        Ok(LinearHead {
            linear: Linear::zeros(embed_dim, classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.linear.out_dim
    }

    pub fn logits(&self, embeddings: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(embeddings.rows(), self.classes());
        for r in 0..embeddings.rows() {
            out.row_mut(r).copy_from_slice(&self.linear.forward(embeddings.row(r)));
        }
        out
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        write_linear(ckpt, prefix, &self.linear);
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(LinearHead {
            linear: read_linear(ckpt, prefix)?,
        })
    }
}

impl Params for LinearHead {
    fn params(&self) -> Vec<&[f64]> {
        self.linear.params()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.linear.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> EncoderShape {
        EncoderShape {
            input_side: 8,
            conv1_channels: 3,
            conv2_channels: 4,
            embed_dim: 5,
        }
    }

    fn random_image(side: u32, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (side * side * 3) as usize;
        RealImage::new(side, side, 3, (0..n).map(|_| rng.random()).collect()).unwrap()
    }

    /// Scalar probe: L = sum_k c_k * e_k with fixed random c.
    fn probe(dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let enc = Encoder::seeded(shape(), 3);
        let img = random_image(8, 4);
        let c = probe(5);
        let loss = |e: &Encoder| -> f64 {
            e.embed(&img).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let trace = enc.forward(&img).unwrap();
        let mut grads = enc.zeros_like();
        enc.backward(&trace, &c, &mut grads);

        let analytic: Vec<f64> = grads.params().concat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..enc.param_count() {
            let mut plus = enc.clone();
            let mut minus = enc.clone();
            let set = |m: &mut Encoder, delta: f64| {
                let mut k = idx;
                for p in m.params_mut() {
                    if k < p.len() {
                        p[k] += delta;
                        return;
                    }
                    k -= p.len();
                }
            };
            set(&mut plus, h);
            set(&mut minus, -h);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            if fd.abs() > 1e-7 || analytic[idx].abs() > 1e-7 {
                worst = worst.max(rel_err(analytic[idx], fd));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ProjectionHead::new(5, 6, 3, &mut rng);
        let e: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = probe(3);
        let f = |e: &[f64]| -> f64 {
            head.forward(e).unwrap().projection.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let trace = head.forward(&e).unwrap();
        let mut grads = head.zeros_like();
        let ge = head.backward(&e, &trace, &c, &mut grads);
        for i in 0..5 {
            let mut p = e.clone();
            let mut m = e.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - ge[i]).abs() < 1e-6, "{fd} vs {}", ge[i]);
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let enc = Encoder::seeded(shape(), 1);
        for seed in 0..5 {
            let e = enc.embed(&random_image(8, seed)).unwrap();
            assert!((norm(&e) - 1.0).abs() < 1e-12);
        }
        assert!(enc.embed(&random_image(9, 0)).is_err());
    }

    #[test]
    fn standardize_centres_outputs() {
        let mut enc = Encoder::seeded(shape(), 2);
        let imgs: Vec<RealImage> = (0..16).map(|s| random_image(8, s)).collect();
        enc.standardize(&imgs).unwrap();
        let raw: Vec<Vec<f64>> = imgs
            .iter()
            .map(|i| {
                let t = enc.forward(i).unwrap();
                t.embedding.iter().map(|v| v * t.raw_norm).collect()
            })
            .collect();
        for k in 0..5 {
            let mean = raw.iter().map(|r| r[k]).sum::<f64>() / 16.0;
            let var = raw.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9, "{mean}");
            assert!((var - 1.0).abs() < 1e-9, "{var}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = Encoder::seeded(shape(), 5);
        let mut ckpt = Checkpoint::new("test");
        enc.write_to(&mut ckpt, "encoder");
        let back = Encoder::read_from(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), "encoder").unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn sgd_step_with_decay() {
        let mut l = Linear::zeros(1, 1);
        l.weight[0] = 2.0;
        let mut g = l.zeros_like();
        g.weight[0] = 1.0;
        l.sgd_step(&g, 0.1, 0.5);
        assert!((l.weight[0] - (2.0 - 0.1 * (1.0 + 1.0))).abs() < 1e-15);
    }
}
