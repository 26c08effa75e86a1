//! Layer implementations.
//!
//! Each layer caches what its backward pass needs during a training-mode
//! forward. Backward consumes the cache, so calling it twice, or after an
//! eval-mode forward, is a [`Error::State`].

use rand::Rng as _;

use super::gemm::gemm;
use crate::rng::Rng;
use crate::{par, Error, Result, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn missing_cache(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a training-mode forward"))
}

fn expect_rank(x: &Tensor, rank: usize, layer: &str) -> Result<()> {
    if x.ndim() != rank {
        return Err(Error::Shape(format!(
            "{layer} expects a rank-{rank} input, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Convolution

/// One contribution of a base weight to an expanded (full) weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TieEntry {
    pub full: u32,
    pub base: u32,
    pub coeff: f32,
}

/// Linear map from a small set of base parameters to the full convolution
/// weight and bias. Used to share filters across group elements.
#[derive(Debug, Clone)]
pub struct Tying {
    pub entries: Vec<TieEntry>,
    /// Full output channel -> base bias index.
    pub bias_index: Vec<usize>,
    /// Spatial filters in the base weight that are free parameters.
    pub base_shape: Vec<usize>,
    pub num_bias: usize,
}

#[derive(Debug)]
struct ConvCache {
    cols: Vec<f32>,
    batch: usize,
    height: usize,
    width: usize,
    full_weight: Vec<f32>,
}

/// 2-D convolution (cross-correlation), stride 1, zero padding.
///
/// With a [`Tying`] the layer owns only the base weights; the full
/// `(out, in, k, k)` filter bank is rebuilt from them every forward.
#[derive(Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
    tying: Option<Tying>,
    cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: Param::new(kaiming_uniform(
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            )),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            tying: None,
            cache: None,
        }
    }

    /// Convolution whose full weight is `tying` applied to fresh base weights.
    pub fn tied(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        tying: Tying,
        rng: &mut Rng,
    ) -> Result<Self> {
        let full_len = out_channels * in_channels * kernel * kernel;
        let base_len: usize = tying.base_shape.iter().product();
        if tying.bias_index.len() != out_channels {
            return Err(Error::Config(format!(
                "tying maps {} bias channels, layer has {out_channels}",
                tying.bias_index.len()
            )));
        }
        if let Some(bad) = tying
            .entries
            .iter()
            .find(|e| e.full as usize >= full_len || e.base as usize >= base_len)
        {
            return Err(Error::Config(format!("tying entry out of range: {bad:?}")));
        }
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(kaiming_uniform(&tying.base_shape, fan_in, rng));
        let bias = Param::new(Tensor::zeros(&[tying.num_bias]));
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight,
            bias,
            tying: Some(tying),
            cache: None,
        })
    }

    pub fn tying(&self) -> Option<&Tying> {
        self.tying.as_ref()
    }

    /// Full `(out, in, k, k)` filter bank.
    pub fn full_weight(&self) -> Vec<f32> {
        match &self.tying {
            None => self.weight.value.data().to_vec(),
            Some(t) => {
                let mut w = vec![0.0f32; self.out_channels * self.in_channels * self.kernel * self.kernel];
                let base = self.weight.value.data();
                for e in &t.entries {
                    w[e.full as usize] += e.coeff * base[e.base as usize];
                }
                w
            }
        }
    }

    pub fn full_bias(&self) -> Vec<f32> {
        match &self.tying {
            None => self.bias.value.data().to_vec(),
            Some(t) => {
                let b = self.bias.value.data();
                t.bias_index.iter().map(|&i| b[i]).collect()
            }
        }
    }

    fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::Shape(format!(
                "conv kernel {} larger than padded input {ph}x{pw}",
                self.kernel
            )));
        }
        Ok((ph - self.kernel + 1, pw - self.kernel + 1))
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 4, "conv2d")?;
        let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (ho, wo) = self.out_size(h, w)?;
        let (k, p, o) = (self.kernel, self.padding, self.out_channels);
        let ckk = c * k * k;
        let hw = ho * wo;
        let weight = self.full_weight();
        let bias = self.full_bias();
        let mut cols = vec![0.0f32; b * ckk * hw];
        let mut out = vec![0.0f32; b * o * hw];
        let xd = x.data();
        par::for_each_chunk2(&mut cols, ckk * hw, &mut out, o * hw, |i, col, y| {
            im2col(&xd[i * c * h * w..(i + 1) * c * h * w], c, h, w, k, p, ho, wo, col);
            gemm(o, ckk, hw, &weight, false, col, false, y, 0.0);
            for (oc, row) in y.chunks_mut(hw).enumerate() {
                let bv = bias[oc];
                row.iter_mut().for_each(|v| *v += bv);
            }
        });
        self.cache = train.then(|| ConvCache {
            cols,
            batch: b,
            height: h,
            width: w,
            full_weight: weight,
        });
        Tensor::new(vec![b, o, ho, wo], out)
    }

    pub fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        let (b, h, w) = (cache.batch, cache.height, cache.width);
        let (k, p, o, c) = (self.kernel, self.padding, self.out_channels, self.in_channels);
        let (ho, wo) = self.out_size(h, w)?;
        let (ckk, hw) = (c * k * k, ho * wo);
        if g.shape() != [b, o, ho, wo] {
            return Err(Error::Shape(format!(
                "conv2d grad {:?} does not match output [{b}, {o}, {ho}, {wo}]",
                g.shape()
            )));
        }
        let gd = g.data();
        let mut gw = vec![0.0f32; o * ckk];
        let mut gb = vec![0.0f64; o];
        for i in 0..b {
            let gi = &gd[i * o * hw..(i + 1) * o * hw];
            gemm(o, hw, ckk, gi, false, &cache.cols[i * ckk * hw..], true, &mut gw, 1.0);
            for (oc, row) in gi.chunks(hw).enumerate() {
                gb[oc] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        match &self.tying {
            None => {
                for (dst, src) in self.weight.grad.data_mut().iter_mut().zip(&gw) {
                    *dst += src;
                }
                for (dst, src) in self.bias.grad.data_mut().iter_mut().zip(&gb) {
                    *dst += *src as f32;
                }
            }
            Some(t) => {
                let wg = self.weight.grad.data_mut();
                for e in &t.entries {
                    wg[e.base as usize] += e.coeff * gw[e.full as usize];
                }
                let bg = self.bias.grad.data_mut();
                for (oc, &bi) in t.bias_index.iter().enumerate() {
                    bg[bi] += gb[oc] as f32;
                }
            }
        }
        if !need_input_grad {
            return Ok(Tensor::zeros(&[0]));
        }
        let weight = &cache.full_weight;
        let mut gx = vec![0.0f32; b * c * h * w];
        par::for_each_chunk(&mut gx, c * h * w, |i, gxi| {
            let mut gcol = vec![0.0f32; ckk * hw];
            gemm(ckk, o, hw, weight, true, &gd[i * o * hw..], false, &mut gcol, 0.0);
            col2im(&gcol, c, h, w, k, p, ho, wo, gxi);
        });
        Tensor::new(vec![b, c, h, w], gx)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    p: usize,
    ho: usize,
    wo: usize,
    col: &mut [f32],
) {
    let hw = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((ch * k + ki) * k + kj) * hw..][..hw];
                for oi in 0..ho {
                    let ii = oi as isize + ki as isize - p as isize;
                    let dst = &mut row[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let jj = oj as isize + kj as isize - p as isize;
                        *d = if jj < 0 || jj >= w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    p: usize,
    ho: usize,
    wo: usize,
    x: &mut [f32],
) {
    let hw = ho * wo;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((ch * k + ki) * k + kj) * hw..][..hw];
                for oi in 0..ho {
                    let ii = oi as isize + ki as isize - p as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = oj as isize + kj as isize - p as isize;
                        if jj >= 0 && jj < w as isize {
                            dst[jj as usize] += row[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense

#[derive(Debug)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::new(kaiming_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.dim(0)] {
            return Err(Error::Shape(format!(
                "dense weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            inputs: weight.dim(1),
            outputs: weight.dim(0),
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 2, "dense")?;
        if x.dim(1) != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects {} features, got {}",
                self.inputs,
                x.dim(1)
            )));
        }
        let b = x.dim(0);
        let mut y = vec![0.0f32; b * self.outputs];
        gemm(b, self.inputs, self.outputs, x.data(), false, self.weight.value.data(), true, &mut y, 0.0);
        let bias = self.bias.value.data();
        for row in y.chunks_mut(self.outputs) {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        self.cache = train.then_some(x);
        Tensor::new(vec![b, self.outputs], y)
    }

    pub fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        let b = x.dim(0);
        if g.shape() != [b, self.outputs] {
            return Err(Error::Shape(format!("dense grad {:?}", g.shape())));
        }
        gemm(
            self.outputs,
            b,
            self.inputs,
            g.data(),
            true,
            x.data(),
            false,
            self.weight.grad.data_mut(),
            1.0,
        );
        let gb = self.bias.grad.data_mut();
        for (j, dst) in gb.iter_mut().enumerate() {
            *dst += (0..b).map(|i| g.data()[i * self.outputs + j] as f64).sum::<f64>() as f32;
        }
        if !need_input_grad {
            return Ok(Tensor::zeros(&[0]));
        }
        let mut gx = vec![0.0f32; b * self.inputs];
        gemm(b, self.outputs, self.inputs, g.data(), false, self.weight.value.data(), false, &mut gx, 0.0);
        Tensor::new(vec![b, self.inputs], gx)
    }
}

// ---------------------------------------------------------------------------
// Activations and normalisation

#[derive(Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        if train {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        Ok(x.map(|v| v.max(0.0)))
    }

    pub fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        g.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(v, &m)| if !m { *v = 0.0 });
        Ok(g)
    }
}

#[derive(Debug)]
struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
}

/// Batch normalisation over `(B, features * group, H, W)` inputs.
///
/// Statistics and affine parameters are shared by the `group` consecutive
/// channels of each feature; `group = 1` is ordinary per-channel batch norm.
#[derive(Debug)]
pub struct BatchNorm {
    pub features: usize,
    pub group: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(features: usize, group: usize) -> Self {
        Self {
            features,
            group,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::new(Tensor::full(&[features], 1.0)),
            beta: Param::new(Tensor::zeros(&[features])),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            cache: None,
        }
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.ndim() < 2 || x.dim(1) != self.features * self.group {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {:?}",
                self.features * self.group,
                x.shape()
            )));
        }
        let spatial: usize = x.shape()[2..].iter().product();
        Ok((x.dim(0), spatial))
    }

    /// Calls `f(feature, offset, len)` for every contiguous run of a feature.
    fn runs(&self, b: usize, spatial: usize, mut f: impl FnMut(usize, usize, usize)) {
        let run = self.group * spatial;
        for i in 0..b {
            for feat in 0..self.features {
                f(feat, (i * self.features + feat) * run, run);
            }
        }
    }

    pub fn forward(&mut self, mut x: Tensor, train: bool) -> Result<Tensor> {
        let (b, spatial) = self.layout(&x)?;
        let nf = self.features;
        let count = (b * self.group * spatial) as f64;
        let (mean, var) = if train {
            let mut sum = vec![0.0f64; nf];
            let mut sq = vec![0.0f64; nf];
            let d = x.data();
            self.runs(b, spatial, |f, off, len| {
                for &v in &d[off..off + len] {
                    sum[f] += v as f64;
                    sq[f] += (v as f64) * (v as f64);
                }
            });
            let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
            let var: Vec<f64> = sq
                .iter()
                .zip(&mean)
                .map(|(s, m)| (s / count - m * m).max(0.0))
                .collect();
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for f in 0..nf {
                self.running_mean[f] =
                    ((1.0 - self.momentum) * self.running_mean[f] as f64 + self.momentum * mean[f]) as f32;
                self.running_var[f] = ((1.0 - self.momentum) * self.running_var[f] as f64
                    + self.momentum * var[f] * unbias) as f32;
            }
            (mean, var)
        } else {
            (
                self.running_mean.iter().map(|&v| v as f64).collect(),
                self.running_var.iter().map(|&v| v as f64).collect(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.data().to_vec();
        let beta = self.beta.value.data().to_vec();
        let mut xhat = if train { vec![0.0f32; x.len()] } else { Vec::new() };
        let d = x.data_mut();
        self.runs(b, spatial, |f, off, len| {
            for idx in off..off + len {
                let h = ((d[idx] as f64 - mean[f]) * inv_std[f]) as f32;
                if train {
                    xhat[idx] = h;
                }
                d[idx] = gamma[f] * h + beta[f];
            }
        });
        self.cache = train.then_some(BnCache { xhat, inv_std });
        Ok(x)
    }

    pub fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batch_norm"))?;
        let (b, spatial) = self.layout(&g)?;
        let nf = self.features;
        let count = (b * self.group * spatial) as f64;
        let mut sum_g = vec![0.0f64; nf];
        let mut sum_gx = vec![0.0f64; nf];
        {
            let d = g.data();
            self.runs(b, spatial, |f, off, len| {
                for idx in off..off + len {
                    sum_g[f] += d[idx] as f64;
                    sum_gx[f] += d[idx] as f64 * cache.xhat[idx] as f64;
                }
            });
        }
        for f in 0..nf {
            self.gamma.grad.data_mut()[f] += sum_gx[f] as f32;
            self.beta.grad.data_mut()[f] += sum_g[f] as f32;
        }
        let gamma = self.gamma.value.data().to_vec();
        let d = g.data_mut();
        self.runs(b, spatial, |f, off, len| {
            let scale = gamma[f] as f64 * cache.inv_std[f] / count;
            for idx in off..off + len {
                let v = count * d[idx] as f64 - sum_g[f] - cache.xhat[idx] as f64 * sum_gx[f];
                d[idx] = (scale * v) as f32;
            }
        });
        Ok(g)
    }
}

#[derive(Debug)]
struct LnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
}

/// Per-sample normalisation over the feature axis of `(B, l)` inputs, without
/// an affine transform, so outputs have zero mean and unit variance.
#[derive(Debug)]
pub struct LayerNorm {
    pub features: usize,
    pub eps: f64,
    cache: Option<LnCache>,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, mut x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 2, "layer_norm")?;
        let l = self.features;
        if x.dim(1) != l {
            return Err(Error::Shape(format!("layer norm expects {l} features, got {}", x.dim(1))));
        }
        let mut inv = Vec::with_capacity(x.dim(0));
        for row in x.data_mut().chunks_mut(l) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / l as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / l as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            row.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * is) as f32);
            inv.push(is);
        }
        if train {
            self.cache = Some(LnCache {
                xhat: x.data().to_vec(),
                inv_std: inv,
            });
        } else {
            self.cache = None;
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("layer_norm"))?;
        let l = self.features;
        for (i, row) in g.data_mut().chunks_mut(l).enumerate() {
            let xh = &cache.xhat[i * l..(i + 1) * l];
            let mg = row.iter().map(|&v| v as f64).sum::<f64>() / l as f64;
            let mgx = row.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / l as f64;
            let is = cache.inv_std[i];
            for (v, &h) in row.iter_mut().zip(xh) {
                *v = (is * (*v as f64 - mg - h as f64 * mgx)) as f32;
            }
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Pooling, dropout, reshaping

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<u32>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 4, "max_pool")?;
        let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0f32; b * c * ho * wo];
        let mut arg = vec![0u32; out.len()];
        let d = x.data();
        for plane in 0..b * c {
            let src = &d[plane * h * w..(plane + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + i * wo + j;
                    out[o] = src[best];
                    arg[o] = best as u32;
                }
            }
        }
        self.cache = train.then(|| (arg, x.shape().to_vec()));
        Tensor::new(vec![b, c, ho, wo], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let (arg, shape) = self.cache.take().ok_or_else(|| missing_cache("max_pool"))?;
        let (h, w) = (shape[2], shape[3]);
        let per_out = (h / 2) * (w / 2);
        let mut gx = Tensor::zeros(&shape);
        let gxd = gx.data_mut();
        for (o, (&a, &v)) in arg.iter().zip(g.data()).enumerate() {
            let plane = o / per_out;
            gxd[plane * h * w + a as usize] += v;
        }
        Ok(gx)
    }
}

/// Element-wise inverted dropout. Identity in eval mode.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, mut x: Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        if !train {
            self.mask = None;
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f32> = if self.rate <= 0.0 {
            vec![1.0; x.len()]
        } else {
            (0..x.len())
                .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        x.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        Ok(x)
    }

    pub fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("dropout"))?;
        g.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(g)
    }

    /// Mask drawn by the last training forward (scaled keep factors).
    pub fn last_mask(&self) -> Option<&[f32]> {
        self.mask.as_deref()
    }
}

#[derive(Debug, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        let b = x.dim(0);
        let rest = x.row_len();
        if train {
            self.shape = Some(x.shape().to_vec());
        }
        x.reshape(&[b, rest])
    }

    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let shape = self.shape.take().ok_or_else(|| missing_cache("flatten"))?;
        g.reshape(&shape)
    }
}

/// Max over the `group` fibre entries of each field:
/// `(B, F * group, H, W) -> (B, F, H, W)`.
#[derive(Debug)]
pub struct GroupPool {
    pub group: usize,
    cache: Option<(Vec<u32>, Vec<usize>)>,
}

impl GroupPool {
    pub fn new(group: usize) -> Self {
        Self { group, cache: None }
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 4, "group_pool")?;
        let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if c % self.group != 0 {
            return Err(Error::Shape(format!(
                "group pool over {} fibres got {c} channels",
                self.group
            )));
        }
        let f = c / self.group;
        let hw = h * w;
        let d = x.data();
        let mut out = vec![0.0f32; b * f * hw];
        let mut arg = vec![0u32; out.len()];
        for i in 0..b {
            for field in 0..f {
                let base = (i * c + field * self.group) * hw;
                for s in 0..hw {
                    let mut best = 0;
                    for e in 1..self.group {
                        if d[base + e * hw + s] > d[base + best * hw + s] {
                            best = e;
                        }
                    }
                    let o = (i * f + field) * hw + s;
                    out[o] = d[base + best * hw + s];
                    arg[o] = best as u32;
                }
            }
        }
        self.cache = train.then(|| (arg, x.shape().to_vec()));
        Tensor::new(vec![b, f, h, w], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let (arg, shape) = self.cache.take().ok_or_else(|| missing_cache("group_pool"))?;
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let f = c / self.group;
        let mut gx = Tensor::zeros(&shape);
        let gxd = gx.data_mut();
        for (o, (&e, &v)) in arg.iter().zip(g.data()).enumerate() {
            let s = o % hw;
            let field = (o / hw) % f;
            let i = o / (hw * f);
            gxd[(i * c + field * self.group + e as usize) * hw + s] += v;
        }
        Ok(gx)
    }
}

/// Averages each channel over orbits of spatial positions and flattens:
/// `(B, F, H, W) -> (B, F * orbits)`. With orbits of a symmetry group acting
/// on the grid, the output is invariant under that group.
#[derive(Debug)]
pub struct OrbitPool {
    pub orbits: Vec<Vec<usize>>,
    pub height: usize,
    pub width: usize,
    shape: Option<Vec<usize>>,
}

impl OrbitPool {
    pub fn new(orbits: Vec<Vec<usize>>, height: usize, width: usize) -> Self {
        Self {
            orbits,
            height,
            width,
            shape: None,
        }
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Result<Tensor> {
        expect_rank(&x, 4, "orbit_pool")?;
        if x.dim(2) != self.height || x.dim(3) != self.width {
            return Err(Error::Shape(format!(
                "orbit pool built for {}x{}, got {:?}",
                self.height,
                self.width,
                x.shape()
            )));
        }
        let (b, f, hw) = (x.dim(0), x.dim(1), self.height * self.width);
        let no = self.orbits.len();
        let d = x.data();
        let mut out = vec![0.0f32; b * f * no];
        for plane in 0..b * f {
            let src = &d[plane * hw..(plane + 1) * hw];
            for (k, orbit) in self.orbits.iter().enumerate() {
                let s: f64 = orbit.iter().map(|&p| src[p] as f64).sum();
                out[plane * no + k] = (s / orbit.len() as f64) as f32;
            }
        }
        if train {
            self.shape = Some(x.shape().to_vec());
        }
        Tensor::new(vec![b, f * no], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let shape = self.shape.take().ok_or_else(|| missing_cache("orbit_pool"))?;
        let hw = self.height * self.width;
        let no = self.orbits.len();
        let mut gx = Tensor::zeros(&shape);
        let gxd = gx.data_mut();
        for (plane, gp) in g.data().chunks(no).enumerate() {
            for (orbit, &v) in self.orbits.iter().zip(gp) {
                let share = v / orbit.len() as f32;
                for &p in orbit {
                    gxd[plane * hw + p] += share;
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu(Relu),
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout),
    Flatten(Flatten),
    GroupPool(GroupPool),
    OrbitPool(OrbitPool),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(c) if c.tying.is_some() => "tied_conv2d",
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::LayerNorm(_) => "layer_norm",
            Layer::MaxPool2d(_) => "max_pool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::GroupPool(_) => "group_pool",
            Layer::OrbitPool(_) => "orbit_pool",
        }
    }

    pub fn forward(&mut self, x: Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x, train),
            Layer::Dense(l) => l.forward(x, train),
            Layer::Relu(l) => l.forward(x, train),
            Layer::BatchNorm(l) => l.forward(x, train),
            Layer::LayerNorm(l) => l.forward(x, train),
            Layer::MaxPool2d(l) => l.forward(x, train),
            Layer::Dropout(l) => l.forward(x, train, rng),
            Layer::Flatten(l) => l.forward(x, train),
            Layer::GroupPool(l) => l.forward(x, train),
            Layer::OrbitPool(l) => l.forward(x, train),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient (an
    /// empty tensor when `need_input_grad` is false and the layer can skip it).
    pub fn backward(&mut self, g: Tensor, need_input_grad: bool) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(g, need_input_grad),
            Layer::Dense(l) => l.backward(g, need_input_grad),
            Layer::Relu(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::LayerNorm(l) => l.backward(g),
            Layer::MaxPool2d(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::Flatten(l) => l.backward(g),
            Layer::GroupPool(l) => l.backward(g),
            Layer::OrbitPool(l) => l.backward(g),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved with checkpoints.
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }
}
