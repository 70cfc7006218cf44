//! Encoder-decoder CNN with skip connections that refines random-forest
//! probability maps, implemented with explicit forward and backward passes.
//!
//! Weights are stored as f32 (matching the on-disk blob format) while all
//! arithmetic runs in f64 so analytic gradients survive a central
//! finite-difference check at 1e-4 relative tolerance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::{ProbabilityMap, TileRecord, TILE_SIZE};
use crate::metrics::auc_roc;
use crate::rforest::ForestModel;
use crate::rng::Rng;

const CLAMP_LO: f64 = 1e-7;
const CLAMP_HI: f64 = 1.0 - 1e-7;

// ---------------------------------------------------------------------------
// Architecture and parameters
// ---------------------------------------------------------------------------

/// Network shape: per-level encoder widths plus the bottleneck width.
/// Kernels are 3x3 same-padding, pooling is 2x2 max, upsampling is a 2x2
/// stride-2 transposed conv, skips concatenate channels, and the head is a
/// 1x1 conv followed by a sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnArch {
    pub enc_channels: Vec<usize>,
    pub bottleneck_channels: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        CnnArch {
            enc_channels: vec![16, 32],
            bottleneck_channels: 64,
        }
    }
}

impl CnnArch {
    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.is_empty() || self.bottleneck_channels == 0 {
            return Err(CoreError::InvalidInput("empty CNN architecture".into()));
        }
        if self.enc_channels.iter().any(|&c| c == 0) {
            return Err(CoreError::InvalidInput("zero-width encoder level".into()));
        }
        if TILE_SIZE % (1 << self.enc_channels.len()) != 0 {
            return Err(CoreError::InvalidInput(format!(
                "tile side {} not divisible by 2^{}",
                TILE_SIZE,
                self.enc_channels.len()
            )));
        }
        Ok(())
    }

    /// Fixed parameter order; serialization concatenates blobs in this order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut prev = 1usize;
        for (i, &ch) in self.enc_channels.iter().enumerate() {
            specs.push(ParamSpec::conv(format!("enc{i}.conv1"), ch, prev, 3));
            specs.push(ParamSpec::bias(format!("enc{i}.conv1.bias"), ch));
            specs.push(ParamSpec::conv(format!("enc{i}.conv2"), ch, ch, 3));
            specs.push(ParamSpec::bias(format!("enc{i}.conv2.bias"), ch));
            prev = ch;
        }
        let bn = self.bottleneck_channels;
        specs.push(ParamSpec::conv("bottleneck.conv1".into(), bn, prev, 3));
        specs.push(ParamSpec::bias("bottleneck.conv1.bias".into(), bn));
        specs.push(ParamSpec::conv("bottleneck.conv2".into(), bn, bn, 3));
        specs.push(ParamSpec::bias("bottleneck.conv2.bias".into(), bn));
        prev = bn;
        for i in (0..self.enc_channels.len()).rev() {
            let ch = self.enc_channels[i];
            specs.push(ParamSpec::conv(format!("dec{i}.up"), ch, prev, 2));
            specs.push(ParamSpec::bias(format!("dec{i}.up.bias"), ch));
            specs.push(ParamSpec::conv(format!("dec{i}.conv1"), ch, 2 * ch, 3));
            specs.push(ParamSpec::bias(format!("dec{i}.conv1.bias"), ch));
            specs.push(ParamSpec::conv(format!("dec{i}.conv2"), ch, ch, 3));
            specs.push(ParamSpec::bias(format!("dec{i}.conv2.bias"), ch));
            prev = ch;
        }
        specs.push(ParamSpec::conv("head".into(), 1, prev, 1));
        specs.push(ParamSpec::bias("head.bias".into(), 1));
        specs
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    /// Conv kernels: [out_c, in_c, k, k]. Biases: [out_c].
    pub shape: Vec<usize>,
}

impl ParamSpec {
    fn conv(name: String, out_c: usize, in_c: usize, k: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![out_c, in_c, k, k],
        }
    }
    fn bias(name: String, out_c: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![out_c],
        }
    }
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: CnnArch,
    /// One buffer per ParamSpec, in spec order.
    pub weights: Vec<Vec<f32>>,
    pub init_seed: u64,
}

impl CnnModel {
    pub fn check_finite(&self) -> Result<()> {
        for (spec, w) in self.arch.param_specs().iter().zip(&self.weights) {
            if w.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Numeric(format!(
                    "non-finite weight in {}",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

/// He-uniform initialization: conv kernels uniform in +-sqrt(6 / fan_in),
/// biases zero. Parameters are filled in spec order from one seeded stream.
pub fn init_model(arch: &CnnArch, seed: u64) -> Result<CnnModel> {
    arch.validate()?;
    let mut rng = Rng::from_seed(seed);
    let mut weights = Vec::new();
    for spec in arch.param_specs() {
        if spec.shape.len() == 1 {
            weights.push(vec![0.0f32; spec.len()]);
        } else {
            let fan_in: usize = spec.shape[1] * spec.shape[2] * spec.shape[3];
            let bound = libm::sqrt(6.0 / fan_in as f64);
            weights.push(
                (0..spec.len())
                    .map(|_| ((rng.next_f64() * 2.0 - 1.0) * bound) as f32)
                    .collect(),
            );
        }
    }
    Ok(CnnModel {
        arch: arch.clone(),
        weights,
        init_seed: seed,
    })
}

// ---------------------------------------------------------------------------
// Feature maps and primitive ops
// ---------------------------------------------------------------------------

/// A single-sample feature map: channels x height x width.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Fmap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Fmap {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }
}

/// Same-padding convolution with an odd square kernel (or 1x1).
fn conv_forward(x: &Fmap, weight: &[f32], bias: &[f32], out_c: usize, k: usize) -> Fmap {
    let pad = k / 2;
    let (h, w) = (x.h, x.w);
    let mut out = Fmap::zeros(out_c, h, w);
    let plane = h * w;
    for oc in 0..out_c {
        let out_plane = &mut out.data[oc * plane..(oc + 1) * plane];
        let b = bias[oc] as f64;
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for ic in 0..x.c {
            let in_plane = &x.data[ic * plane..(ic + 1) * plane];
            let wbase = (oc * x.c + ic) * k * k;
            for kr in 0..k {
                for kc in 0..k {
                    let wv = weight[wbase + kr * k + kc] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    // Output row r reads input row r + kr - pad.
                    let r_lo = pad.saturating_sub(kr);
                    let r_hi = (h + pad).saturating_sub(kr).min(h);
                    let c_lo = pad.saturating_sub(kc);
                    let c_hi = (w + pad).saturating_sub(kc).min(w);
                    for r in r_lo..r_hi {
                        let ir = r + kr - pad;
                        let src = &in_plane[ir * w + c_lo + kc - pad..ir * w + c_hi + kc - pad];
                        let dst = &mut out_plane[r * w + c_lo..r * w + c_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a same-padding convolution. Returns d_input and accumulates
/// d_weight / d_bias into the provided buffers.
fn conv_backward(
    x: &Fmap,
    weight: &[f32],
    out_c: usize,
    k: usize,
    d_out: &Fmap,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) -> Fmap {
    let pad = k / 2;
    let (h, w) = (x.h, x.w);
    let plane = h * w;
    let mut dx = Fmap::zeros(x.c, h, w);
    for oc in 0..out_c {
        let dout_plane = &d_out.data[oc * plane..(oc + 1) * plane];
        d_bias[oc] += dout_plane.iter().sum::<f64>();
        for ic in 0..x.c {
            let in_plane = &x.data[ic * plane..(ic + 1) * plane];
            let dx_plane = &mut dx.data[ic * plane..(ic + 1) * plane];
            let wbase = (oc * x.c + ic) * k * k;
            for kr in 0..k {
                for kc in 0..k {
                    let widx = wbase + kr * k + kc;
                    let wv = weight[widx] as f64;
                    let mut dw = 0.0;
                    let r_lo = pad.saturating_sub(kr);
                    let r_hi = (h + pad).saturating_sub(kr).min(h);
                    let c_lo = pad.saturating_sub(kc);
                    let c_hi = (w + pad).saturating_sub(kc).min(w);
                    for r in r_lo..r_hi {
                        let ir = r + kr - pad;
                        let src = &in_plane[ir * w + c_lo + kc - pad..ir * w + c_hi + kc - pad];
                        let dxs = &mut dx_plane[ir * w + c_lo + kc - pad..ir * w + c_hi + kc - pad];
                        let douts = &dout_plane[r * w + c_lo..r * w + c_hi];
                        for ((s, dxv), g) in src.iter().zip(dxs.iter_mut()).zip(douts) {
                            dw += s * g;
                            *dxv += wv * g;
                        }
                    }
                    d_weight[widx] += dw;
                }
            }
        }
    }
    dx
}

/// ReLU in place; the activation itself serves as the backward mask.
fn relu_forward(x: &mut Fmap) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_backward(act: &Fmap, d_out: &mut Fmap) {
    for (g, &a) in d_out.data.iter_mut().zip(&act.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling; records the flat input index of each maximum.
fn maxpool_forward(x: &Fmap) -> (Fmap, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Fmap::zeros(x.c, oh, ow);
    let mut arg = vec![0u32; x.c * oh * ow];
    let plane = x.h * x.w;
    for c in 0..x.c {
        let in_plane = &x.data[c * plane..(c + 1) * plane];
        for r in 0..oh {
            for q in 0..ow {
                let mut best_idx = (2 * r) * x.w + 2 * q;
                let mut best = in_plane[best_idx];
                for (dr, dc) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (2 * r + dr) * x.w + 2 * q + dc;
                    if in_plane[idx] > best {
                        best = in_plane[idx];
                        best_idx = idx;
                    }
                }
                out.data[c * oh * ow + r * ow + q] = best;
                arg[c * oh * ow + r * ow + q] = (c * plane + best_idx) as u32;
            }
        }
    }
    (out, arg)
}

fn maxpool_backward(arg: &[u32], d_out: &Fmap, in_c: usize, in_h: usize, in_w: usize) -> Fmap {
    let mut dx = Fmap::zeros(in_c, in_h, in_w);
    for (&a, &g) in arg.iter().zip(&d_out.data) {
        dx.data[a as usize] += g;
    }
    dx
}

/// 2x2 stride-2 transposed convolution: each input pixel scatters into a
/// 2x2 output block. Weight layout [out_c, in_c, 2, 2].
fn tconv_forward(x: &Fmap, weight: &[f32], bias: &[f32], out_c: usize) -> Fmap {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Fmap::zeros(out_c, oh, ow);
    let in_plane = x.h * x.w;
    let out_plane = oh * ow;
    for oc in 0..out_c {
        let b = bias[oc] as f64;
        let dst = &mut out.data[oc * out_plane..(oc + 1) * out_plane];
        for v in dst.iter_mut() {
            *v = b;
        }
        for ic in 0..x.c {
            let src = &x.data[ic * in_plane..(ic + 1) * in_plane];
            let wbase = (oc * x.c + ic) * 4;
            for dr in 0..2 {
                for dc in 0..2 {
                    let wv = weight[wbase + dr * 2 + dc] as f64;
                    for r in 0..x.h {
                        for q in 0..x.w {
                            dst[(2 * r + dr) * ow + 2 * q + dc] += wv * src[r * x.w + q];
                        }
                    }
                }
            }
        }
    }
    out
}

fn tconv_backward(
    x: &Fmap,
    weight: &[f32],
    out_c: usize,
    d_out: &Fmap,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) -> Fmap {
    let mut dx = Fmap::zeros(x.c, x.h, x.w);
    let in_plane = x.h * x.w;
    let out_plane = d_out.h * d_out.w;
    let ow = d_out.w;
    for oc in 0..out_c {
        let gplane = &d_out.data[oc * out_plane..(oc + 1) * out_plane];
        d_bias[oc] += gplane.iter().sum::<f64>();
        for ic in 0..x.c {
            let src = &x.data[ic * in_plane..(ic + 1) * in_plane];
            let dxp = &mut dx.data[ic * in_plane..(ic + 1) * in_plane];
            let wbase = (oc * x.c + ic) * 4;
            for dr in 0..2 {
                for dc in 0..2 {
                    let widx = wbase + dr * 2 + dc;
                    let wv = weight[widx] as f64;
                    let mut dw = 0.0;
                    for r in 0..x.h {
                        for q in 0..x.w {
                            let g = gplane[(2 * r + dr) * ow + 2 * q + dc];
                            dw += src[r * x.w + q] * g;
                            dxp[r * x.w + q] += wv * g;
                        }
                    }
                    d_weight[widx] += dw;
                }
            }
        }
    }
    dx
}

/// Channel concatenation: upsampled features first, then the skip.
fn concat(up: &Fmap, skip: &Fmap) -> Fmap {
    debug_assert_eq!((up.h, up.w), (skip.h, skip.w));
    let mut data = Vec::with_capacity(up.data.len() + skip.data.len());
    data.extend_from_slice(&up.data);
    data.extend_from_slice(&skip.data);
    Fmap {
        c: up.c + skip.c,
        h: up.h,
        w: up.w,
        data,
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct EncCache {
    input: Fmap,
    act1: Fmap,
    act2: Fmap,
    pool_arg: Vec<u32>,
}

struct DecCache {
    up_input: Fmap,
    cat: Fmap,
    act1: Fmap,
    act2: Fmap,
}

struct Cache {
    enc: Vec<EncCache>,
    bn_input: Fmap,
    bn_act1: Fmap,
    bn_act2: Fmap,
    dec: Vec<DecCache>,
    out: Fmap,
}

// Parameter tensor offsets within the flat weight list.
const PER_ENC: usize = 4;
const PER_DEC: usize = 6;

fn forward_cached(model: &CnnModel, input: Fmap) -> Cache {
    let arch = &model.arch;
    let levels = arch.enc_channels.len();
    let w = &model.weights;

    let mut enc = Vec::with_capacity(levels);
    let mut x = input;
    for (i, &ch) in arch.enc_channels.iter().enumerate() {
        let base = i * PER_ENC;
        let mut a1 = conv_forward(&x, &w[base], &w[base + 1], ch, 3);
        relu_forward(&mut a1);
        let mut a2 = conv_forward(&a1, &w[base + 2], &w[base + 3], ch, 3);
        relu_forward(&mut a2);
        let (pooled, arg) = maxpool_forward(&a2);
        enc.push(EncCache {
            input: x,
            act1: a1,
            act2: a2,
            pool_arg: arg,
        });
        x = pooled;
    }

    let bn_base = levels * PER_ENC;
    let bn = arch.bottleneck_channels;
    let bn_input = x;
    let mut b1 = conv_forward(&bn_input, &w[bn_base], &w[bn_base + 1], bn, 3);
    relu_forward(&mut b1);
    let mut b2 = conv_forward(&b1, &w[bn_base + 2], &w[bn_base + 3], bn, 3);
    relu_forward(&mut b2);

    let dec_base = bn_base + 4;
    let mut dec = Vec::with_capacity(levels);
    let mut y = b2.clone();
    for (pos, i) in (0..levels).rev().enumerate() {
        let ch = arch.enc_channels[i];
        let base = dec_base + pos * PER_DEC;
        let up = tconv_forward(&y, &w[base], &w[base + 1], ch);
        let cat = concat(&up, &enc[i].act2);
        let mut a1 = conv_forward(&cat, &w[base + 2], &w[base + 3], ch, 3);
        relu_forward(&mut a1);
        let mut a2 = conv_forward(&a1, &w[base + 4], &w[base + 5], ch, 3);
        relu_forward(&mut a2);
        dec.push(DecCache {
            up_input: y,
            cat,
            act1: a1,
            act2: a2,
        });
        y = dec.last().unwrap().act2.clone();
    }

    let head_base = dec_base + levels * PER_DEC;
    let logits = conv_forward(&y, &w[head_base], &w[head_base + 1], 1, 1);
    let mut out = logits;
    for v in &mut out.data {
        *v = 1.0 / (1.0 + libm::exp(-*v));
    }

    Cache {
        enc,
        bn_input,
        bn_act1: b1,
        bn_act2: b2,
        dec,
        out,
    }
}

/// Runs the network on one probability map. Input and output are
/// channels=1 feature maps of identical spatial dimensions.
pub fn forward(model: &CnnModel, input: &Fmap) -> Result<Fmap> {
    check_input(model, input)?;
    Ok(forward_cached(model, input.clone()).out)
}

fn check_input(model: &CnnModel, input: &Fmap) -> Result<()> {
    if input.c != 1 {
        return Err(CoreError::DimensionMismatch(format!(
            "CNN input must have 1 channel, got {}",
            input.c
        )));
    }
    let div = 1 << model.arch.enc_channels.len();
    if input.h % div != 0 || input.w % div != 0 || input.h == 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "input {}x{} not divisible by {div}",
            input.h, input.w
        )));
    }
    Ok(())
}

/// Binary cross-entropy over unmasked pixels, with predictions clamped to
/// [1e-7, 1 - 1e-7]. Returns (loss sum, pixel count).
pub fn bce_sum(pred: &[f64], target: &[u8], pad_mask: Option<&[u8]>) -> Result<(f64, usize)> {
    if pred.len() != target.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "pred length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (&p, &y)) in pred.iter().zip(target).enumerate() {
        if let Some(m) = pad_mask {
            if m[i] == 1 {
                continue;
            }
        }
        let p = p.clamp(CLAMP_LO, CLAMP_HI);
        sum -= if y == 1 { libm::log(p) } else { libm::log(1.0 - p) };
        count += 1;
    }
    Ok((sum, count))
}

/// Mean binary cross-entropy over unmasked pixels.
pub fn bce_loss(pred: &[f64], target: &[u8], pad_mask: Option<&[u8]>) -> Result<f64> {
    let (sum, count) = bce_sum(pred, target, pad_mask)?;
    if count == 0 {
        return Err(CoreError::InvalidInput("all pixels masked".into()));
    }
    Ok(sum / count as f64)
}

/// Per-parameter gradient buffers, parallel to `CnnModel::weights`.
pub type Grads = Vec<Vec<f64>>;

pub fn zero_grads(model: &CnnModel) -> Grads {
    model.weights.iter().map(|w| vec![0.0; w.len()]).collect()
}

/// One training sample for the refiner: an RF probability map with the
/// tile's ground truth and pad mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSample {
    pub tile_id: u64,
    pub input: ProbabilityMap,
    pub labels: Vec<u8>,
    pub pad_mask: Vec<u8>,
}

impl CnnSample {
    fn input_fmap(&self) -> Fmap {
        Fmap {
            c: 1,
            h: self.input.rows,
            w: self.input.cols,
            data: self.input.probs.iter().map(|&p| p as f64).collect(),
        }
    }
}

/// Forward + backward for one sample, accumulating parameter gradients of
/// the *sum* (not mean) of per-pixel BCE terms. The caller divides by the
/// total pixel count, so batch accumulation order is fixed by sample index.
pub fn accumulate_sample_grads(
    model: &CnnModel,
    sample: &CnnSample,
    grads: &mut Grads,
) -> Result<(f64, usize)> {
    let input = sample.input_fmap();
    check_input(model, &input)?;
    let cache = forward_cached(model, input);
    let (loss_sum, count) = bce_sum(&cache.out.data, &sample.labels, Some(&sample.pad_mask))?;

    // d(loss_sum)/d(logit) = p - y on unmasked pixels inside the clamp range.
    let mut d = Fmap::zeros(1, cache.out.h, cache.out.w);
    for (i, (&p, gv)) in cache.out.data.iter().zip(d.data.iter_mut()).enumerate() {
        if sample.pad_mask[i] == 1 {
            continue;
        }
        if p < CLAMP_LO || p > CLAMP_HI {
            continue;
        }
        *gv = p - sample.labels[i] as f64;
    }

    backprop(model, &cache, d, grads);
    Ok((loss_sum, count))
}

fn backprop(model: &CnnModel, cache: &Cache, d_logits: Fmap, grads: &mut Grads) {
    let arch = &model.arch;
    let levels = arch.enc_channels.len();
    let w = &model.weights;
    let bn_base = levels * PER_ENC;
    let dec_base = bn_base + 4;
    let head_base = dec_base + levels * PER_DEC;

    // Head (1x1 conv). Its input is the last decoder activation.
    let head_in = &cache.dec.last().map(|d| &d.act2).unwrap_or(&cache.bn_act2);
    let (dw, rest) = grads.split_at_mut(head_base + 1);
    let mut d = conv_backward(
        head_in,
        &w[head_base],
        1,
        1,
        &d_logits,
        &mut dw[head_base],
        &mut rest[0],
    );

    // Decoder levels in reverse execution order.
    let mut d_skips: Vec<Option<Fmap>> = (0..levels).map(|_| None).collect();
    for (pos, i) in (0..levels).rev().enumerate().rev() {
        let base = dec_base + pos * PER_DEC;
        let dc = &cache.dec[pos];
        let ch = arch.enc_channels[i];

        relu_backward(&dc.act2, &mut d);
        let (g1, g2) = {
            let (a, b) = grads.split_at_mut(base + 5);
            (&mut a[base + 4], &mut b[0])
        };
        let mut d1 = conv_backward(&dc.act1, &w[base + 4], ch, 3, &d, g1, g2);
        relu_backward(&dc.act1, &mut d1);
        let (g1, g2) = {
            let (a, b) = grads.split_at_mut(base + 3);
            (&mut a[base + 2], &mut b[0])
        };
        let d_cat = conv_backward(&dc.cat, &w[base + 2], ch, 3, &d1, g1, g2);

        // Split the concat gradient: upsampled part first, then the skip.
        let up_c = ch;
        let plane = d_cat.h * d_cat.w;
        let d_up = Fmap {
            c: up_c,
            h: d_cat.h,
            w: d_cat.w,
            data: d_cat.data[..up_c * plane].to_vec(),
        };
        let d_skip = Fmap {
            c: d_cat.c - up_c,
            h: d_cat.h,
            w: d_cat.w,
            data: d_cat.data[up_c * plane..].to_vec(),
        };
        d_skips[i] = Some(d_skip);

        let (g1, g2) = {
            let (a, b) = grads.split_at_mut(base + 1);
            (&mut a[base], &mut b[0])
        };
        d = tconv_backward(&dc.up_input, &w[base], ch, &d_up, g1, g2);
    }

    // Bottleneck.
    let bn = arch.bottleneck_channels;
    relu_backward(&cache.bn_act2, &mut d);
    let (g1, g2) = {
        let (a, b) = grads.split_at_mut(bn_base + 3);
        (&mut a[bn_base + 2], &mut b[0])
    };
    let mut d1 = conv_backward(&cache.bn_act1, &w[bn_base + 2], bn, 3, &d, g1, g2);
    relu_backward(&cache.bn_act1, &mut d1);
    let (g1, g2) = {
        let (a, b) = grads.split_at_mut(bn_base + 1);
        (&mut a[bn_base], &mut b[0])
    };
    d = conv_backward(&cache.bn_input, &w[bn_base], bn, 3, &d1, g1, g2);

    // Encoder levels in reverse, adding each level's skip gradient.
    for i in (0..levels).rev() {
        let ec = &cache.enc[i];
        let ch = arch.enc_channels[i];
        let base = i * PER_ENC;

        let mut d_act2 = maxpool_backward(&ec.pool_arg, &d, ec.act2.c, ec.act2.h, ec.act2.w);
        if let Some(ds) = &d_skips[i] {
            for (a, b) in d_act2.data.iter_mut().zip(&ds.data) {
                *a += b;
            }
        }
        relu_backward(&ec.act2, &mut d_act2);
        let (g1, g2) = {
            let (a, b) = grads.split_at_mut(base + 3);
            (&mut a[base + 2], &mut b[0])
        };
        let mut d1 = conv_backward(&ec.act1, &w[base + 2], ch, 3, &d_act2, g1, g2);
        relu_backward(&ec.act1, &mut d1);
        let (g1, g2) = {
            let (a, b) = grads.split_at_mut(base + 1);
            (&mut a[base], &mut b[0])
        };
        d = conv_backward(&ec.input, &w[base], ch, 3, &d1, g1, g2);
    }
}

/// Gradients of the mean BCE over a batch. Accumulation order is fixed by
/// sample index.
pub fn backward(model: &CnnModel, batch: &[CnnSample]) -> Result<(f64, Grads)> {
    let mut grads = zero_grads(model);
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for sample in batch {
        let (s, c) = accumulate_sample_grads(model, sample, &mut grads)?;
        loss_sum += s;
        count += c;
    }
    if count == 0 {
        return Err(CoreError::InvalidInput("batch has no unmasked pixels".into()));
    }
    let inv = 1.0 / count as f64;
    for g in &mut grads {
        for v in g.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss_sum * inv, grads))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidInput("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(CoreError::InvalidInput("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &CnnModel) -> Self {
        AdamState {
            m: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            step: 0,
        }
    }
}

/// Standard Adam update with bias correction. Weight storage is f32; the
/// update itself runs in f64.
pub fn adam_step(model: &mut CnnModel, grads: &Grads, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.adam_beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.adam_beta2, t as f64);
    for ((w, g), (m, v)) in model
        .weights
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..w.len() {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] = (w[i] as f64 - cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.adam_eps))
                as f32;
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset construction and training loop
// ---------------------------------------------------------------------------

/// Builds the CNN's train/val/test sets from RF predictions.
///
/// Only validation and test tiles are used: the RF has seen its own training
/// tiles, so maps predicted on them would be optimistically biased.
/// Validation maps are shuffled (seeded) and split 80/20 into CNN train/val;
/// test maps pass through as the CNN test set.
pub fn make_cnn_dataset(
    rf_model: &ForestModel,
    val_tiles: &[TileRecord],
    test_tiles: &[TileRecord],
    rf_train_ids: &[u64],
    split_seed: u64,
) -> Result<(Vec<CnnSample>, Vec<CnnSample>, Vec<CnnSample>)> {
    if val_tiles.is_empty() {
        return Err(CoreError::InvalidInput("empty validation set".into()));
    }
    for t in val_tiles.iter().chain(test_tiles) {
        if rf_train_ids.contains(&t.tile_id) {
            return Err(CoreError::InvalidInput(format!(
                "tile {} was used to train the RF; its map would be biased",
                t.tile_id
            )));
        }
    }
    let predict = |tiles: &[TileRecord]| -> Result<Vec<CnnSample>> {
        tiles
            .iter()
            .map(|t| {
                Ok(CnnSample {
                    tile_id: t.tile_id,
                    input: rf_model.predict_map(t)?,
                    labels: t.labels.clone(),
                    pad_mask: t.pad_mask.clone(),
                })
            })
            .collect()
    };
    let mut val_samples = predict(val_tiles)?;
    let test_samples = predict(test_tiles)?;

    let mut rng = Rng::from_seed(split_seed);
    let mut order: Vec<usize> = (0..val_samples.len()).collect();
    rng.shuffle(&mut order);
    let n_train = (val_samples.len() * 4) / 5;
    let mut cnn_train = Vec::with_capacity(n_train);
    let mut cnn_val = Vec::with_capacity(val_samples.len() - n_train);
    // Drain in shuffled order without cloning the sample payloads.
    let mut taken: Vec<Option<CnnSample>> = val_samples.drain(..).map(Some).collect();
    for (pos, &idx) in order.iter().enumerate() {
        let s = taken[idx].take().unwrap();
        if pos < n_train {
            cnn_train.push(s);
        } else {
            cnn_val.push(s);
        }
    }
    Ok((cnn_train, cnn_val, test_samples))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

/// Pixel-wise AUC of model outputs against labels over unmasked pixels.
/// Returns 0.5 when the pixels are single-class.
pub fn validation_auc(model: &CnnModel, samples: &[CnnSample]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        let out = forward(model, &s.input_fmap())?;
        for (i, &p) in out.data.iter().enumerate() {
            if s.pad_mask[i] == 1 {
                continue;
            }
            scores.push(p);
            labels.push(s.labels[i]);
        }
    }
    match auc_roc(&scores, &labels) {
        Ok(a) => Ok(a),
        Err(CoreError::SingleClass) => Ok(0.5),
        Err(e) => Err(e),
    }
}

/// Seeded minibatch Adam on BCE; returns the weight snapshot with the best
/// validation AUC (earliest epoch on ties) plus the per-epoch log.
pub fn train_cnn(
    model: &CnnModel,
    cnn_train: &[CnnSample],
    cnn_val: &[CnnSample],
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if cnn_train.is_empty() || cnn_val.is_empty() {
        return Err(CoreError::InvalidInput("empty CNN train or val set".into()));
    }
    let mut current = model.clone();
    let mut state = AdamState::new(&current);
    let mut rng = Rng::from_seed(cfg.seed);
    let mut best: Option<(f64, CnnModel)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..cnn_train.len()).collect();
        rng.shuffle(&mut order);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_pixels = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(&current);
            let mut batch_sum = 0.0;
            let mut batch_count = 0usize;
            for &idx in chunk {
                let (s, c) = accumulate_sample_grads(&current, &cnn_train[idx], &mut grads)?;
                batch_sum += s;
                batch_count += c;
            }
            if batch_count == 0 {
                continue;
            }
            let inv = 1.0 / batch_count as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            let batch_loss = batch_sum * inv;
            if !batch_loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "NaN/Inf loss at epoch {epoch}"
                )));
            }
            adam_step(&mut current, &grads, &mut state, cfg);
            epoch_loss_sum += batch_sum;
            epoch_pixels += batch_count;
        }

        let train_loss = epoch_loss_sum / epoch_pixels.max(1) as f64;
        let val_auc = validation_auc(&current, cnn_val)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_auc,
        });
        let improved = match &best {
            None => true,
            Some((b, _)) => val_auc > *b,
        };
        if improved {
            best = Some((val_auc, current.clone()));
        }
    }

    let (_, best_model) = best.expect("epochs >= 1 guarantees a snapshot");
    Ok((best_model, log))
}

// ReLU on/off pattern plus maxpool argmax choices. Two forward passes with
// equal signatures traverse the same linear region of the piecewise-smooth
// loss, which a central difference requires to be valid.
fn activation_signature(cache: &Cache) -> Vec<u64> {
    fn push_acts(f: &Fmap, sig: &mut Vec<u64>) {
        for &v in &f.data {
            sig.push((v > 0.0) as u64);
        }
    }
    let mut sig = Vec::new();
    for e in &cache.enc {
        push_acts(&e.act1, &mut sig);
        push_acts(&e.act2, &mut sig);
        sig.extend(e.pool_arg.iter().map(|&a| a as u64));
    }
    push_acts(&cache.bn_act1, &mut sig);
    push_acts(&cache.bn_act2, &mut sig);
    for d in &cache.dec {
        push_acts(&d.act1, &mut sig);
        push_acts(&d.act2, &mut sig);
    }
    sig
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter. Test-support oracle: the finite
/// differences go through the forward pass + `bce_sum` only and never touch
/// the backward pass they check. The denominator uses the actually-stored f32
/// perturbation so f32 representation error cancels. When a perturbation
/// flips a ReLU or maxpool choice the step crosses a kink and the central
/// difference no longer estimates the derivative at the center point, so the
/// step shrinks for that parameter until the activation pattern is stable.
pub fn finite_diff_max_rel_error(model: &CnnModel, sample: &CnnSample) -> Result<f64> {
    let (_, grads) = backward(model, core::slice::from_ref(sample))?;
    let input = sample.input_fmap();
    check_input(model, &input)?;
    let base_sig = activation_signature(&forward_cached(model, input.clone()));
    let mut max_err = 0.0f64;
    for t in 0..model.weights.len() {
        for i in 0..model.weights[t].len() {
            let orig = model.weights[t][i];
            let mut m = model.clone();
            let mut eps = 1e-3f64;
            let mut fd = 0.0f64;
            for attempt in 0..4 {
                m.weights[t][i] = (orig as f64 + eps) as f32;
                let hi = m.weights[t][i] as f64;
                let cache_hi = forward_cached(&m, input.clone());
                let (loss_plus, count) =
                    bce_sum(&cache_hi.out.data, &sample.labels, Some(&sample.pad_mask))?;
                m.weights[t][i] = (orig as f64 - eps) as f32;
                let lo = m.weights[t][i] as f64;
                let cache_lo = forward_cached(&m, input.clone());
                let (loss_minus, _) =
                    bce_sum(&cache_lo.out.data, &sample.labels, Some(&sample.pad_mask))?;
                fd = (loss_plus - loss_minus) / ((hi - lo) * count as f64);
                let smooth = activation_signature(&cache_hi) == base_sig
                    && activation_signature(&cache_lo) == base_sig;
                if smooth || attempt == 3 {
                    break;
                }
                eps *= 0.1;
            }
            let analytic = grads[t][i];
            let err = (analytic - fd).abs() / analytic.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Runs the refiner on one RF probability map.
pub fn refine_map(model: &CnnModel, map: &ProbabilityMap) -> Result<ProbabilityMap> {
    let input = Fmap {
        c: 1,
        h: map.rows,
        w: map.cols,
        data: map.probs.iter().map(|&p| p as f64).collect(),
    };
    let out = forward(model, &input)?;
    ProbabilityMap::new(map.rows, map.cols, out.data.iter().map(|&v| v as f32).collect())
}
