use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_patch, CountPredictor, Prediction};
use crate::error::{Error, Result};
use crate::geometry::Patch;

/// Shape of the small CNN: a stack of 3x3 convolutions (padding 1, bias, ReLU),
/// global average pooling, then a 4-way softmax head and a softplus count head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    /// Inputs are standardized as `(v - input_mean) / input_std`; padded
    /// pixels map to 0 after standardization.
    #[serde(default)]
    pub input_mean: f64,
    #[serde(default = "unit")]
    pub input_std: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            widths: vec![8, 16, 24, 32, 48, 48],
            strides: vec![2, 2, 2, 2, 2, 1],
            input_mean: 0.0,
            input_std: 1.0,
        }
    }
}

impl ToyNetConfig {
    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::InvalidInput(
                "toynet needs one stride per conv layer and at least one layer".into(),
            ));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidInput(
                "toynet input must have 1 or 3 channels".into(),
            ));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::InvalidInput(
                "zero width or stride in toynet config".into(),
            ));
        }
        if !self.input_mean.is_finite() || !(self.input_std > 0.0 && self.input_std.is_finite()) {
            return Err(Error::InvalidInput(
                "input standardization needs a finite mean and positive std".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvSlot {
    cin: usize,
    cout: usize,
    stride: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    convs: Vec<ConvSlot>,
    features: usize,
    cls_w: usize,
    cls_b: usize,
    cnt_w: usize,
    cnt_b: usize,
    len: usize,
}

impl Layout {
    fn new(cfg: &ToyNetConfig) -> Self {
        let mut off = 0;
        let mut cin = cfg.in_channels;
        let mut convs = Vec::new();
        for (&cout, &stride) in cfg.widths.iter().zip(&cfg.strides) {
            let w = off;
            off += cout * cin * 9;
            let b = off;
            off += cout;
            convs.push(ConvSlot {
                cin,
                cout,
                stride,
                w,
                b,
            });
            cin = cout;
        }
        let features = cin;
        let cls_w = off;
        let cls_b = cls_w + 4 * features;
        let cnt_w = cls_b + 4;
        let cnt_b = cnt_w + features;
        Self {
            convs,
            features,
            cls_w,
            cls_b,
            cnt_w,
            cnt_b,
            len: cnt_b + 1,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub(crate) struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` is the ReLU output of conv `i`.
    acts: Vec<Tensor>,
    pooled: Vec<f64>,
    pub(crate) probs: [f64; 4],
    pub(crate) z: f64,
    pub(crate) count: f64,
}

impl Trace {
    /// True when every ReLU is on the same side of zero in both traces.
    pub(crate) fn same_relu_pattern(&self, other: &Trace) -> bool {
        self.acts[1..].iter().zip(&other.acts[1..]).all(|(a, b)| {
            a.data
                .iter()
                .zip(&b.data)
                .all(|(x, y)| (*x > 0.0) == (*y > 0.0))
        })
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64; 4]) -> [f64; 4] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Output columns `ox` whose tap `kx` lands inside `[0, width)`.
fn valid_cols(kx: usize, stride: usize, width: usize, out_w: usize) -> Range<usize> {
    let lo = if kx == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi = ((width - kx) / stride + 1).min(out_w);
    lo..hi.max(lo)
}

/// Columns of a tensor regrouped by `x % stride`, so the taps of a strided
/// convolution read contiguous runs. Phase `p` holds columns
/// `p, p + stride, ...` of every row.
struct Phased {
    stride: usize,
    h: usize,
    phases: Vec<(usize, Vec<f64>)>,
}

impl Phased {
    fn width(w: usize, stride: usize, p: usize) -> usize {
        w.saturating_sub(p).div_ceil(stride)
    }

    fn zeros(c: usize, h: usize, w: usize, stride: usize) -> Self {
        let phases = (0..stride)
            .map(|p| {
                let wp = Self::width(w, stride, p);
                (wp, vec![0.0; c * h * wp])
            })
            .collect();
        Self { stride, h, phases }
    }

    fn split(t: &Tensor, stride: usize) -> Self {
        let mut out = Self::zeros(t.c, t.h, t.w, stride);
        for (p, (wp, data)) in out.phases.iter_mut().enumerate() {
            for (src, dst) in t.data.chunks_exact(t.w).zip(data.chunks_exact_mut(*wp)) {
                for (d, &v) in dst.iter_mut().zip(src[p..].iter().step_by(stride)) {
                    *d = v;
                }
            }
        }
        out
    }

    fn merge_into(&self, t: &mut Tensor) {
        for (p, (wp, data)) in self.phases.iter().enumerate() {
            for (dst, src) in t.data.chunks_exact_mut(t.w).zip(data.chunks_exact(*wp)) {
                for (d, &v) in dst[p..].iter_mut().step_by(self.stride).zip(src) {
                    *d = v;
                }
            }
        }
    }

    /// The run read by tap `kx` over `cols` in row `iy` of channel `ci`.
    fn run(&self, ci: usize, iy: usize, kx: usize, cols: &Range<usize>) -> (usize, usize) {
        let x0 = cols.start * self.stride + kx - 1;
        let (p, i0) = (x0 % self.stride, x0 / self.stride);
        let wp = self.phases[p].0;
        (p, (ci * self.h + iy) * wp + i0)
    }
}

/// Input row of tap `ky` for output row `oy`, if inside the image.
fn tap_row(oy: usize, ky: usize, stride: usize, h: usize) -> Option<usize> {
    (oy * stride + ky).checked_sub(1).filter(|&iy| iy < h)
}

fn conv_forward(inp: &Tensor, params: &[f64], s: &ConvSlot) -> Tensor {
    let ho = (inp.h - 1) / s.stride + 1;
    let wo = (inp.w - 1) / s.stride + 1;
    let mut out = Tensor::zeros(s.cout, ho, wo);
    let w = &params[s.w..s.w + s.cout * s.cin * 9];
    let bias = &params[s.b..s.b + s.cout];
    let ph = Phased::split(inp, s.stride);
    let cols: [Range<usize>; 3] = std::array::from_fn(|kx| valid_cols(kx, s.stride, inp.w, wo));
    for co in 0..s.cout {
        let oplane = &mut out.data[co * ho * wo..(co + 1) * ho * wo];
        oplane.fill(bias[co]);
        for ci in 0..s.cin {
            for ky in 0..3 {
                for (kx, cols) in cols.iter().enumerate() {
                    if cols.is_empty() {
                        continue;
                    }
                    let wv = w[((co * s.cin + ci) * 3 + ky) * 3 + kx];
                    for oy in 0..ho {
                        let Some(iy) = tap_row(oy, ky, s.stride, inp.h) else {
                            continue;
                        };
                        let (p, at) = ph.run(ci, iy, kx, cols);
                        let irow = &ph.phases[p].1[at..at + cols.len()];
                        let orow = &mut oplane[oy * wo + cols.start..oy * wo + cols.end];
                        for (o, &x) in orow.iter_mut().zip(irow) {
                            *o += wv * x;
                        }
                    }
                }
            }
        }
        for v in oplane.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Output channels whose weight gradients are accumulated side by side.
const CO_BLOCK: usize = 4;

/// `dpre` is the gradient w.r.t. the pre-activation output.
fn conv_backward(
    inp: &Tensor,
    dpre: &Tensor,
    params: &[f64],
    s: &ConvSlot,
    grad: &mut [f64],
    din: Option<&mut Tensor>,
) {
    let (ho, wo) = (dpre.h, dpre.w);
    let ph = Phased::split(inp, s.stride);
    let cols: [Range<usize>; 3] = std::array::from_fn(|kx| valid_cols(kx, s.stride, inp.w, wo));
    for co in 0..s.cout {
        grad[s.b + co] += dpre.plane(co).iter().sum::<f64>();
    }

    // Weight gradients: each is one running sum over (oy, ox); independent
    // sums for neighbouring output channels share the input reads.
    for co0 in (0..s.cout).step_by(CO_BLOCK) {
        let block = CO_BLOCK.min(s.cout - co0);
        for ci in 0..s.cin {
            for ky in 0..3 {
                for (kx, cols) in cols.iter().enumerate() {
                    if cols.is_empty() {
                        continue;
                    }
                    let mut gw = [0.0f64; CO_BLOCK];
                    for oy in 0..ho {
                        let Some(iy) = tap_row(oy, ky, s.stride, inp.h) else {
                            continue;
                        };
                        let (p, at) = ph.run(ci, iy, kx, cols);
                        let irow = &ph.phases[p].1[at..at + cols.len()];
                        let row = |j: usize| {
                            let base = (co0 + j) * ho * wo + oy * wo;
                            &dpre.data[base + cols.start..base + cols.end]
                        };
                        if block == CO_BLOCK {
                            let (d0, d1, d2, d3) = (row(0), row(1), row(2), row(3));
                            for (i, &x) in irow.iter().enumerate() {
                                gw[0] += d0[i] * x;
                                gw[1] += d1[i] * x;
                                gw[2] += d2[i] * x;
                                gw[3] += d3[i] * x;
                            }
                        } else {
                            for (j, g) in gw.iter_mut().enumerate().take(block) {
                                for (&d, &x) in row(j).iter().zip(irow) {
                                    *g += d * x;
                                }
                            }
                        }
                    }
                    for (j, g) in gw.iter().enumerate().take(block) {
                        grad[s.w + (((co0 + j) * s.cin + ci) * 3 + ky) * 3 + kx] += g;
                    }
                }
            }
        }
    }

    // Input gradients, accumulated per element in (co, ky, kx) order.
    let Some(din) = din else {
        return;
    };
    let mut dph = Phased::zeros(inp.c, inp.h, inp.w, s.stride);
    for ci in 0..s.cin {
        for co in 0..s.cout {
            let dplane = dpre.plane(co);
            for ky in 0..3 {
                for (kx, cols) in cols.iter().enumerate() {
                    if cols.is_empty() {
                        continue;
                    }
                    let wv = params[s.w + ((co * s.cin + ci) * 3 + ky) * 3 + kx];
                    for oy in 0..ho {
                        let Some(iy) = tap_row(oy, ky, s.stride, inp.h) else {
                            continue;
                        };
                        let (p, at) = dph.run(ci, iy, kx, cols);
                        let drow = &dplane[oy * wo + cols.start..oy * wo + cols.end];
                        let out = &mut dph.phases[p].1[at..at + cols.len()];
                        for (o, &d) in out.iter_mut().zip(drow) {
                            *o += wv * d;
                        }
                    }
                }
            }
        }
    }
    dph.merge_into(din);
}

const CONV_BIAS_INIT: f64 = 0.01;

/// Small trainable patch predictor with hand-written backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    config: ToyNetConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl ToyNet {
    /// He-normal conv weights, small positive conv biases, small normal head
    /// weights. A zero bias would park units of blank regions exactly on the
    /// ReLU kink.
    pub fn new(config: ToyNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &layout.convs {
            let std = (2.0 / (s.cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for p in &mut params[s.w..s.b] {
                *p = normal.sample(&mut rng);
            }
            params[s.b..s.b + s.cout].fill(CONV_BIAS_INIT);
        }
        let head = Normal::new(0.0, (1.0 / layout.features as f64).sqrt()).unwrap();
        for p in &mut params[layout.cls_w..layout.cls_b] {
            *p = head.sample(&mut rng);
        }
        for p in &mut params[layout.cnt_w..layout.cnt_b] {
            *p = head.sample(&mut rng);
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ToyNetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::Format(format!(
                "toynet expects {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite toynet parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    /// Named parameter tensors as ranges into [`ToyNet::params`].
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let l = &self.layout;
        let mut g = Vec::new();
        for (i, s) in l.convs.iter().enumerate() {
            g.push((format!("conv{i}.weight"), s.w..s.b));
            g.push((format!("conv{i}.bias"), s.b..s.b + s.cout));
        }
        g.push(("class_fc.weight".into(), l.cls_w..l.cls_b));
        g.push(("class_fc.bias".into(), l.cls_b..l.cnt_w));
        g.push(("count_fc.weight".into(), l.cnt_w..l.cnt_b));
        g.push(("count_fc.bias".into(), l.cnt_b..l.len));
        g
    }

    /// Sets the count-head bias so an all-zero feature vector predicts `count`.
    pub(crate) fn set_count_prior(&mut self, count: f64) {
        let c = count.max(1e-3);
        // inverse softplus
        self.params[self.layout.cnt_b] = if c > 30.0 { c } else { c.exp_m1().ln() };
    }

    fn input_tensor(&self, patch: &Patch) -> Result<Tensor> {
        check_patch(patch)?;
        let g = patch.pixels();
        let src = if g.channels() == self.config.in_channels {
            std::borrow::Cow::Borrowed(g)
        } else if g.channels() == 3 && self.config.in_channels == 1 {
            std::borrow::Cow::Owned(g.to_grayscale())
        } else {
            return Err(Error::Shape {
                layer: "input".into(),
                detail: format!(
                    "patch has {} channels, network expects {}",
                    g.channels(),
                    self.config.in_channels
                ),
            });
        };
        let (h, w, c) = (src.height(), src.width(), src.channels());
        let mut t = Tensor::zeros(c, h, w);
        let data = src.data();
        let pad = patch.pad_mask();
        let (mean, inv_std) = (self.config.input_mean, 1.0 / self.config.input_std);
        for y in 0..h {
            for x in 0..w {
                if pad.is_padding(x, y) {
                    continue;
                }
                for k in 0..c {
                    t.data[(k * h + y) * w + x] =
                        (data[(y * w + x) * c + k] as f64 - mean) * inv_std;
                }
            }
        }
        Ok(t)
    }

    pub(crate) fn forward(&self, patch: &Patch) -> Result<Trace> {
        let mut acts = vec![self.input_tensor(patch)?];
        for s in &self.layout.convs {
            let next = conv_forward(acts.last().unwrap(), &self.params, s);
            acts.push(next);
        }
        let last = acts.last().unwrap();
        let area = (last.h * last.w) as f64;
        let pooled: Vec<f64> = (0..last.c)
            .map(|c| last.plane(c).iter().sum::<f64>() / area)
            .collect();
        let l = &self.layout;
        let f = l.features;
        let mut logits = [0.0; 4];
        for (k, lg) in logits.iter_mut().enumerate() {
            let row = &self.params[l.cls_w + k * f..l.cls_w + (k + 1) * f];
            *lg =
                self.params[l.cls_b + k] + row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
        }
        let z = self.params[l.cnt_b]
            + self.params[l.cnt_w..l.cnt_b]
                .iter()
                .zip(&pooled)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(Trace {
            acts,
            pooled,
            probs: softmax(&logits),
            z,
            count: softplus(z),
        })
    }

    /// Accumulates into `grad` the parameter gradient given the loss gradient
    /// w.r.t. the class logits and the pre-softplus count `z`.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &[f64; 4], dz: f64, grad: &mut [f64]) {
        let l = &self.layout;
        let f = l.features;
        let mut dpooled = vec![0.0; f];
        for k in 0..4 {
            grad[l.cls_b + k] += dlogits[k];
            for j in 0..f {
                grad[l.cls_w + k * f + j] += dlogits[k] * trace.pooled[j];
                dpooled[j] += dlogits[k] * self.params[l.cls_w + k * f + j];
            }
        }
        grad[l.cnt_b] += dz;
        for j in 0..f {
            grad[l.cnt_w + j] += dz * trace.pooled[j];
            dpooled[j] += dz * self.params[l.cnt_w + j];
        }

        let last = trace.acts.last().unwrap();
        let area = (last.h * last.w) as f64;
        let mut dout = Tensor::zeros(last.c, last.h, last.w);
        for c in 0..last.c {
            let g = dpooled[c] / area;
            dout.data[c * last.h * last.w..(c + 1) * last.h * last.w].fill(g);
        }
        for (i, s) in l.convs.iter().enumerate().rev() {
            let out = &trace.acts[i + 1];
            for (d, &a) in dout.data.iter_mut().zip(&out.data) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let inp = &trace.acts[i];
            if i > 0 {
                let mut din = Tensor::zeros(inp.c, inp.h, inp.w);
                conv_backward(inp, &dout, &self.params, s, grad, Some(&mut din));
                dout = din;
            } else {
                conv_backward(inp, &dout, &self.params, s, grad, None);
            }
        }
    }
}

impl CountPredictor for ToyNet {
    fn predict(&self, patch: &Patch) -> Result<Prediction> {
        let t = self.forward(patch)?;
        Ok(Prediction {
            scores: t.probs,
            count: t.count,
        })
    }

    fn describe(&self) -> String {
        format!("toynet({} params)", self.param_count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelGrid;

    fn patch(seed: u32) -> Patch {
        Patch::from_pixels(PixelGrid::from_fn(224, 224, 1, |y, x, _| {
            (((x * 7 + y * 13 + seed as usize * 31) % 97) as f32) / 97.0
        }))
        .unwrap()
    }

    #[test]
    fn default_size_and_output_shape() {
        let net = ToyNet::new(ToyNetConfig::default(), 1).unwrap();
        assert_eq!(net.param_count(), 46_573);
        let t = net.forward(&patch(0)).unwrap();
        let last = t.acts.last().unwrap();
        assert_eq!((last.c, last.h, last.w), (48, 7, 7));
        let s: f64 = t.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(t.count > 0.0);
        let groups = net.param_groups();
        assert_eq!(groups.last().unwrap().1.end, net.param_count());
    }

    #[test]
    fn valid_columns_match_bounds() {
        for &stride in &[1usize, 2] {
            for &w in &[7usize, 8, 224] {
                let wo = (w - 1) / stride + 1;
                for kx in 0..3 {
                    let expect: Vec<usize> = (0..wo)
                        .filter(|&ox| {
                            let ix = (ox * stride + kx) as isize - 1;
                            ix >= 0 && (ix as usize) < w
                        })
                        .collect();
                    let got: Vec<usize> = valid_cols(kx, stride, w, wo).collect();
                    assert_eq!(got, expect, "stride {stride} w {w} kx {kx}");
                }
            }
        }
    }

    #[test]
    fn standardization_zeroes_padding() {
        let cfg = ToyNetConfig {
            input_mean: 0.5,
            input_std: 0.25,
            ..ToyNetConfig::default()
        };
        let net = ToyNet::new(cfg, 1).unwrap();
        let flat = Patch::from_pixels(PixelGrid::filled(224, 224, 1, 0.75)).unwrap();
        let t = net
            .input_tensor(&crate::geometry::downscale_pad(&flat))
            .unwrap();
        assert_eq!(t.data[0], 1.0);
        assert_eq!(t.data[223], 0.0);
        assert_eq!(t.data[224 * 200], 0.0);
        let legacy: ToyNetConfig =
            serde_json::from_str(r#"{"in_channels":1,"widths":[4],"strides":[2]}"#).unwrap();
        assert_eq!((legacy.input_mean, legacy.input_std), (0.0, 1.0));
    }

    #[test]
    fn conv_matches_naive() {
        let cfg = ToyNetConfig {
            in_channels: 1,
            widths: vec![2],
            strides: vec![2],
            ..ToyNetConfig::default()
        };
        let net = ToyNet::new(cfg, 3).unwrap();
        let p = patch(2);
        let t = net.forward(&p).unwrap();
        let s = &net.layout.convs[0];
        let g = p.pixels();
        for co in 0..2 {
            for &(oy, ox) in &[(0usize, 0usize), (5, 111), (111, 111), (50, 3)] {
                let mut acc = net.params[s.b + co];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy >= 0 && ix >= 0 && (iy as usize) < 224 && (ix as usize) < 224 {
                            acc += net.params[s.w + (co * 3 + ky) * 3 + kx]
                                * g.get(iy as usize, ix as usize, 0) as f64;
                        }
                    }
                }
                let got = t.acts[1].data[(co * 112 + oy) * 112 + ox];
                assert!((got - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn params_roundtrip_and_validation() {
        let net = ToyNet::new(ToyNetConfig::default(), 9).unwrap();
        let again = ToyNet::from_params(net.config().clone(), net.params().to_vec()).unwrap();
        assert_eq!(again, net);
        assert!(ToyNet::from_params(net.config().clone(), vec![0.0; 3]).is_err());
        let bad = ToyNetConfig {
            in_channels: 2,
            ..ToyNetConfig::default()
        };
        assert!(ToyNet::new(bad, 0).is_err());
    }

    #[test]
    fn count_prior_sets_output() {
        let mut net = ToyNet::new(ToyNetConfig::default(), 2).unwrap();
        let l = net.layout.clone();
        net.params[l.cnt_w..l.cnt_b].fill(0.0);
        net.set_count_prior(12.5);
        let c = net.predict(&patch(1)).unwrap().count;
        assert!((c - 12.5).abs() < 1e-9);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300 || sigmoid(-800.0) == 0.0);
    }
}
