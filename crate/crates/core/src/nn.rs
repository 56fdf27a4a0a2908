//! Small sequential network core: channels × time tensors, 1-D layers with
//! hand-written reverse mode, and Adam.
//!
//! Every activation is a 2-D tensor `[channels, time]`. A model is an
//! ordered list of named layers; [`Layer::Residual`] nests a sub-list whose
//! output is added to its input.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!("{:?} cannot hold {} values", shape, data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Build `[rows, cols]` from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(&[rows.len(), c], rows.concat())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let t = self.shape[self.shape.len() - 1];
        self.data.chunks(t).map(|c| c.to_vec()).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, time)` of a 2-D activation.
    pub fn ct(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [c, t] => Ok((c, t)),
            _ => Err(Error::ShapeMismatch(format!("expected [channels, time], got {:?}", self.shape))),
        }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let t = self.shape[1];
        &self.data[c * t..(c + 1) * t]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    Linear,
    Glu,
    InstanceNorm,
    PixelShuffle1d,
    Upsample1d,
    Sigmoid,
    Residual,
}

impl LayerKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Conv1d => "conv1d",
            Self::Linear => "linear",
            Self::Glu => "glu",
            Self::InstanceNorm => "instance-norm",
            Self::PixelShuffle1d => "pixel-shuffle",
            Self::Upsample1d => "upsample",
            Self::Sigmoid => "sigmoid",
            Self::Residual => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// weight `[out, in, kernel]`, bias `[out]`
    Conv1d { name: String, weight: Tensor, bias: Tensor, stride: usize, padding: usize },
    /// weight `[out, in]`, bias `[out]`; applied independently at every time step
    Linear { name: String, weight: Tensor, bias: Tensor },
    /// splits channels in halves `a | b` and returns `a · σ(b)`
    Glu { name: String },
    /// per-channel normalization over time with affine `gamma`, `beta`
    InstanceNorm { name: String, gamma: Tensor, beta: Tensor },
    /// `[c·r, t] → [c, t·r]`
    PixelShuffle1d { name: String, factor: usize },
    /// nearest-neighbour repeat, `[c, t] → [c, t·r]`
    Upsample1d { name: String, factor: usize },
    Sigmoid { name: String },
    Residual { name: String, body: Vec<Layer> },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv1d { name, .. }
            | Layer::Linear { name, .. }
            | Layer::Glu { name }
            | Layer::InstanceNorm { name, .. }
            | Layer::PixelShuffle1d { name, .. }
            | Layer::Upsample1d { name, .. }
            | Layer::Sigmoid { name }
            | Layer::Residual { name, .. } => name,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d { .. } => LayerKind::Conv1d,
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Glu { .. } => LayerKind::Glu,
            Layer::InstanceNorm { .. } => LayerKind::InstanceNorm,
            Layer::PixelShuffle1d { .. } => LayerKind::PixelShuffle1d,
            Layer::Upsample1d { .. } => LayerKind::Upsample1d,
            Layer::Sigmoid { .. } => LayerKind::Sigmoid,
            Layer::Residual { .. } => LayerKind::Residual,
        }
    }

    pub fn conv(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
        Layer::Conv1d {
            name: name.into(),
            weight: Tensor::zeros(&[out_ch, in_ch, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    pub fn linear(name: &str, in_f: usize, out_f: usize) -> Layer {
        Layer::Linear { name: name.into(), weight: Tensor::zeros(&[out_f, in_f]), bias: Tensor::zeros(&[out_f]) }
    }

    pub fn norm(name: &str, channels: usize) -> Layer {
        Layer::InstanceNorm {
            name: name.into(),
            gamma: Tensor { shape: vec![channels], data: vec![1.0; channels] },
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn glu(name: &str) -> Layer {
        Layer::Glu { name: name.into() }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        match self {
            Layer::Conv1d { weight, bias, .. } | Layer::Linear { weight, bias, .. } => {
                out.push(weight);
                out.push(bias);
            }
            Layer::InstanceNorm { gamma, beta, .. } => {
                out.push(gamma);
                out.push(beta);
            }
            Layer::Residual { body, .. } => body.iter().for_each(|l| l.collect_params(out)),
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        match self {
            Layer::Conv1d { weight, bias, .. } | Layer::Linear { weight, bias, .. } => {
                out.push(weight);
                out.push(bias);
            }
            Layer::InstanceNorm { gamma, beta, .. } => {
                out.push(gamma);
                out.push(beta);
            }
            Layer::Residual { body, .. } => body.iter_mut().for_each(|l| l.collect_params_mut(out)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Cache(Vec<Saved>);

#[derive(Debug, Clone)]
enum Saved {
    Input(Tensor),
    Norm { xhat: Tensor, inv_std: Vec<f64> },
    Output(Tensor),
    Shape(Vec<usize>),
    Nested(Cache),
}

/// Gradients in [`ModelParams::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Grads(p.params().iter().map(|t| Tensor::zeros(&t.shape)).collect())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|v| *v *= s);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = t + 2 * pad;
    if span < k {
        None
    } else {
        Some((span - k) / stride + 1)
    }
}

fn pad_rows(x: &Tensor, pad: usize) -> (Vec<f64>, usize) {
    let (c, t) = (x.shape[0], x.shape[1]);
    let tp = t + 2 * pad;
    let mut out = vec![0.0; c * tp];
    for i in 0..c {
        out[i * tp + pad..i * tp + pad + t].copy_from_slice(x.row(i));
    }
    (out, tp)
}

/// `c = a·b + beta·c` for row-major `c` (m×n); `a` and `b` given with
/// explicit (row, column) strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold padded rows into `[cin·k, tout]` columns.
fn im2col(xp: &[f64], cin: usize, tp: usize, k: usize, stride: usize, tout: usize) -> Vec<f64> {
    let mut col = vec![0.0; cin * k * tout];
    for i in 0..cin {
        let xi = &xp[i * tp..(i + 1) * tp];
        for kk in 0..k {
            let dst = &mut col[(i * k + kk) * tout..(i * k + kk + 1) * tout];
            if stride == 1 {
                dst.copy_from_slice(&xi[kk..kk + tout]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = xi[t * stride + kk];
                }
            }
        }
    }
    col
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (cin, t) = x.ct()?;
    let (cout, wi, k) = (w.shape[0], w.shape[1], w.shape[2]);
    if wi != cin {
        return Err(Error::ShapeMismatch(format!("conv expects {wi} input channels, got {cin}")));
    }
    let tout = conv_out_len(t, k, stride, pad)
        .ok_or_else(|| Error::ShapeMismatch(format!("sequence of {t} frames too short for kernel {k}")))?;
    let (xp, tp) = pad_rows(x, pad);
    let col = im2col(&xp, cin, tp, k, stride, tout);
    let mut y = vec![0.0; cout * tout];
    for o in 0..cout {
        y[o * tout..(o + 1) * tout].fill(b.data[o]);
    }
    let ck = cin * k;
    gemm(cout, ck, tout, &w.data, (ck, 1), &col, (tout, 1), 1.0, &mut y);
    Ok(Tensor { shape: vec![cout, tout], data: y })
}

/// Returns (dx, dw, db).
fn conv_backward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (cin, t) = (x.shape[0], x.shape[1]);
    let (cout, k) = (w.shape[0], w.shape[2]);
    let tout = dy.shape[1];
    let ck = cin * k;
    let (xp, tp) = pad_rows(x, pad);
    let col = im2col(&xp, cin, tp, k, stride, tout);
    let mut dw = vec![0.0; w.len()];
    gemm(cout, tout, ck, &dy.data, (tout, 1), &col, (1, tout), 0.0, &mut dw);
    let mut dcol = vec![0.0; ck * tout];
    gemm(ck, cout, tout, &w.data, (1, ck), &dy.data, (tout, 1), 0.0, &mut dcol);
    let db = (0..cout).map(|o| dy.row(o).iter().sum()).collect();
    let mut dxp = vec![0.0; cin * tp];
    for i in 0..cin {
        let dxi = &mut dxp[i * tp..(i + 1) * tp];
        for kk in 0..k {
            let src = &dcol[(i * k + kk) * tout..(i * k + kk + 1) * tout];
            if stride == 1 {
                for (d, s) in dxi[kk..kk + tout].iter_mut().zip(src) {
                    *d += s;
                }
            } else {
                for (tt, s) in src.iter().enumerate() {
                    dxi[tt * stride + kk] += s;
                }
            }
        }
    }
    let mut dx = vec![0.0; cin * t];
    for i in 0..cin {
        dx[i * t..(i + 1) * t].copy_from_slice(&dxp[i * tp + pad..i * tp + pad + t]);
    }
    (
        Tensor { shape: vec![cin, t], data: dx },
        Tensor { shape: w.shape.clone(), data: dw },
        Tensor { shape: vec![cout], data: db },
    )
}

fn as_conv(w: &Tensor) -> Tensor {
    Tensor { shape: vec![w.shape[0], w.shape[1], 1], data: w.data.clone() }
}

fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Saved)> {
    let (c, t) = x.ct()?;
    Ok(match layer {
        Layer::Conv1d { weight, bias, stride, padding, .. } => {
            (conv_forward(x, weight, bias, *stride, *padding)?, Saved::Input(x.clone()))
        }
        Layer::Linear { weight, bias, .. } => (conv_forward(x, &as_conv(weight), bias, 1, 0)?, Saved::Input(x.clone())),
        Layer::Glu { .. } => {
            if c % 2 != 0 {
                return Err(Error::ShapeMismatch(format!("GLU needs an even channel count, got {c}")));
            }
            let h = c / 2 * t;
            let data = x.data[..h].iter().zip(&x.data[h..]).map(|(a, b)| a * sigmoid(*b)).collect();
            (Tensor { shape: vec![c / 2, t], data }, Saved::Input(x.clone()))
        }
        Layer::InstanceNorm { gamma, beta, .. } => {
            if gamma.len() != c {
                return Err(Error::ShapeMismatch(format!("norm over {} channels, got {c}", gamma.len())));
            }
            let mut xhat = vec![0.0; c * t];
            let mut y = vec![0.0; c * t];
            let mut inv_std = vec![0.0; c];
            for i in 0..c {
                let r = x.row(i);
                let mean = r.iter().sum::<f64>() / t as f64;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[i] = is;
                for j in 0..t {
                    let h = (r[j] - mean) * is;
                    xhat[i * t + j] = h;
                    y[i * t + j] = gamma.data[i] * h + beta.data[i];
                }
            }
            (Tensor { shape: vec![c, t], data: y }, Saved::Norm { xhat: Tensor { shape: vec![c, t], data: xhat }, inv_std })
        }
        Layer::PixelShuffle1d { factor, .. } => {
            let r = *factor;
            if c % r != 0 {
                return Err(Error::ShapeMismatch(format!("{c} channels not divisible by shuffle factor {r}")));
            }
            let co = c / r;
            let mut y = vec![0.0; c * t];
            for o in 0..co {
                for j in 0..r {
                    let src = x.row(o * r + j);
                    for (tt, v) in src.iter().enumerate() {
                        y[o * t * r + tt * r + j] = *v;
                    }
                }
            }
            (Tensor { shape: vec![co, t * r], data: y }, Saved::Shape(x.shape.clone()))
        }
        Layer::Upsample1d { factor, .. } => {
            let r = *factor;
            let data = x.data.iter().flat_map(|&v| std::iter::repeat_n(v, r)).collect();
            (Tensor { shape: vec![c, t * r], data }, Saved::Shape(x.shape.clone()))
        }
        Layer::Sigmoid { .. } => {
            let y = x.map(sigmoid);
            (y.clone(), Saved::Output(y))
        }
        Layer::Residual { body, .. } => {
            let (mut y, cache) = forward_layers(body, x)?;
            if y.shape != x.shape {
                return Err(Error::ShapeMismatch(format!("residual body maps {:?} to {:?}", x.shape, y.shape)));
            }
            y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
            (y, Saved::Nested(cache))
        }
    })
}

/// Returns the input gradient and this layer's parameter gradients (possibly empty).
fn layer_backward(layer: &Layer, saved: &Saved, dy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    Ok(match (layer, saved) {
        (Layer::Conv1d { weight, stride, padding, .. }, Saved::Input(x)) => {
            let (dx, dw, db) = conv_backward(x, weight, *stride, *padding, dy);
            (dx, vec![dw, db])
        }
        (Layer::Linear { weight, .. }, Saved::Input(x)) => {
            let (dx, dw, db) = conv_backward(x, &as_conv(weight), 1, 0, dy);
            (dx, vec![Tensor { shape: weight.shape.clone(), data: dw.data }, db])
        }
        (Layer::Glu { .. }, Saved::Input(x)) => {
            let h = x.len() / 2;
            let mut dx = vec![0.0; x.len()];
            for j in 0..h {
                let (a, s) = (x.data[j], sigmoid(x.data[h + j]));
                dx[j] = dy.data[j] * s;
                dx[h + j] = dy.data[j] * a * s * (1.0 - s);
            }
            (Tensor { shape: x.shape.clone(), data: dx }, vec![])
        }
        (Layer::InstanceNorm { gamma, .. }, Saved::Norm { xhat, inv_std }) => {
            let (c, t) = (xhat.shape[0], xhat.shape[1]);
            let mut dx = vec![0.0; c * t];
            let mut dg = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..c {
                let g = dy.row(i);
                let xh = xhat.row(i);
                dbeta[i] = g.iter().sum();
                dg[i] = g.iter().zip(xh).map(|(a, b)| a * b).sum();
                let mean_g = dbeta[i] / t as f64;
                let mean_gx = dg[i] / t as f64;
                let k = gamma.data[i] * inv_std[i];
                for j in 0..t {
                    dx[i * t + j] = k * (g[j] - mean_g - xh[j] * mean_gx);
                }
            }
            (Tensor { shape: vec![c, t], data: dx }, vec![Tensor { shape: vec![c], data: dg }, Tensor { shape: vec![c], data: dbeta }])
        }
        (Layer::PixelShuffle1d { factor, .. }, Saved::Shape(shape)) => {
            let r = *factor;
            let (c, t) = (shape[0], shape[1]);
            let mut dx = vec![0.0; c * t];
            for o in 0..c / r {
                for j in 0..r {
                    for tt in 0..t {
                        dx[(o * r + j) * t + tt] = dy.data[o * t * r + tt * r + j];
                    }
                }
            }
            (Tensor { shape: shape.clone(), data: dx }, vec![])
        }
        (Layer::Upsample1d { factor, .. }, Saved::Shape(shape)) => {
            let data = dy.data.chunks(*factor).map(|g| g.iter().sum()).collect();
            (Tensor { shape: shape.clone(), data }, vec![])
        }
        (Layer::Sigmoid { .. }, Saved::Output(y)) => {
            let data = y.data.iter().zip(&dy.data).map(|(s, g)| g * s * (1.0 - s)).collect();
            (Tensor { shape: y.shape.clone(), data }, vec![])
        }
        (Layer::Residual { body, .. }, Saved::Nested(cache)) => {
            let (mut dx, grads) = backward_layers(body, cache, dy)?;
            dx.data.iter_mut().zip(&dy.data).for_each(|(a, b)| *a += b);
            (dx, grads.0)
        }
        _ => return Err(Error::ShapeMismatch(format!("cache does not match layer {}", layer.name()))),
    })
}

fn forward_layers(layers: &[Layer], x: &Tensor) -> Result<(Tensor, Cache)> {
    let mut saved = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for l in layers {
        let (y, s) = layer_forward(l, &cur)?;
        saved.push(s);
        cur = y;
    }
    Ok((cur, Cache(saved)))
}

fn backward_layers(layers: &[Layer], cache: &Cache, dy: &Tensor) -> Result<(Tensor, Grads)> {
    if cache.0.len() != layers.len() {
        return Err(Error::ShapeMismatch("cache length differs from layer count".into()));
    }
    let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); layers.len()];
    let mut g = dy.clone();
    for (i, l) in layers.iter().enumerate().rev() {
        let (dx, pg) = layer_backward(l, &cache.0[i], &g)?;
        per_layer[i] = pg;
        g = dx;
    }
    Ok((g, Grads(per_layer.into_iter().flatten().collect())))
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Every trainable tensor, depth-first in layer order (weight before bias).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut v));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        self.layers.iter_mut().for_each(|l| l.collect_params_mut(&mut v));
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        forward_layers(&self.layers, x)
    }

    /// Parameter gradients and input gradient for upstream gradient `dy`.
    pub fn backward(&self, cache: &Cache, dy: &Tensor) -> Result<(Grads, Tensor)> {
        let (dx, g) = backward_layers(&self.layers, cache, dy)?;
        Ok((g, dx))
    }

    /// Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init_glorot(&mut self, rng: &mut ChaCha8Rng) {
        fn visit(l: &mut Layer, rng: &mut ChaCha8Rng) {
            match l {
                Layer::Conv1d { weight, .. } | Layer::Linear { weight, .. } => {
                    let k = if weight.shape.len() == 3 { weight.shape[2] } else { 1 };
                    let fan = (weight.shape[0] + weight.shape[1]) * k;
                    let lim = (6.0 / fan as f64).sqrt();
                    weight.data.iter_mut().for_each(|w| *w = rng.random_range(-lim..lim));
                }
                Layer::Residual { body, .. } => body.iter_mut().for_each(|b| visit(b, rng)),
                _ => {}
            }
        }
        self.layers.iter_mut().for_each(|l| visit(l, rng));
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.init_glorot(&mut ChaCha8Rng::seed_from_u64(seed));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(p: &ModelParams) -> Self {
        let z: Vec<Tensor> = p.params().iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Self { m: z.clone(), v: z, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(p: &mut ModelParams, g: &Grads, s: &mut AdamState, lr: f64) -> Result<()> {
    let mut params = p.params_mut();
    if params.len() != g.0.len() || params.len() != s.m.len() {
        return Err(Error::ShapeMismatch(format!("{} parameters, {} gradients, {} moments", params.len(), g.0.len(), s.m.len())));
    }
    for (p, g) in params.iter().zip(&g.0) {
        if p.shape != g.shape {
            return Err(Error::ShapeMismatch(format!("parameter {:?} vs gradient {:?}", p.shape, g.shape)));
        }
    }
    s.step += 1;
    let c1 = 1.0 - s.beta1.powi(s.step as i32);
    let c2 = 1.0 - s.beta2.powi(s.step as i32);
    for (i, w) in params.iter_mut().enumerate() {
        let (m, v) = (&mut s.m[i].data, &mut s.v[i].data);
        for (j, wv) in w.data.iter_mut().enumerate() {
            let gv = g.0[i].data[j];
            m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * gv;
            v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * gv * gv;
            *wv -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + s.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_output() {
        let m = ModelParams::new(vec![Layer::conv("a", 3, 4, 3, 1, 1), Layer::glu("g"), Layer::linear("o", 2, 5)]);
        let x = rand_tensor(&[3, 9], &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.forward(&x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_input() {
        let mut l = Layer::conv("id", 4, 4, 1, 1, 0);
        if let Layer::Conv1d { weight, .. } = &mut l {
            for i in 0..4 {
                weight.data[i * 4 + i] = 1.0;
            }
        }
        let m = ModelParams::new(vec![l]);
        let x = rand_tensor(&[4, 7], &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(m.forward(&x).unwrap(), x);
        let (g, dx) = m.backward(&m.forward_cached(&x).unwrap().1, &Tensor { shape: vec![4, 7], data: vec![1.0; 28] }).unwrap();
        assert!(dx.data.iter().all(|&v| v == 1.0));
        assert_eq!(g.0.len(), 2);
    }

    #[test]
    fn shape_errors() {
        let m = ModelParams::new(vec![Layer::conv("a", 3, 4, 3, 1, 0)]);
        assert!(matches!(m.forward(&Tensor::zeros(&[2, 9])), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.forward(&Tensor::zeros(&[3, 2])), Err(Error::ShapeMismatch(_))));
        let g = ModelParams::new(vec![Layer::glu("g")]);
        assert!(g.forward(&Tensor::zeros(&[3, 4])).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn pixel_shuffle_layout() {
        let m = ModelParams::new(vec![Layer::PixelShuffle1d { name: "ps".into(), factor: 2 }]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0]]).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape, vec![1, 4]);
        assert_eq!(y.data, vec![1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn upsample_repeats_frames() {
        let m = ModelParams::new(vec![Layer::Upsample1d { name: "up".into(), factor: 2 }]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0]]).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape, vec![2, 4]);
        assert_eq!(y.data, vec![1.0, 1.0, 2.0, 2.0, 10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn instance_norm_output_moments() {
        let m = ModelParams::new(vec![Layer::norm("n", 3)]);
        let x = rand_tensor(&[3, 50], &mut ChaCha8Rng::seed_from_u64(3));
        let y = m.forward(&x).unwrap();
        for i in 0..3 {
            let r = y.row(i);
            let mean = r.iter().sum::<f64>() / 50.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = ModelParams::new(vec![Layer::conv("a", 2, 4, 3, 2, 1), Layer::norm("n", 4), Layer::glu("g"), Layer::linear("o", 2, 3)])
            .seeded(4);
        let x = rand_tensor(&[2, 10], &mut ChaCha8Rng::seed_from_u64(5));
        let (y, c) = m.forward_cached(&x).unwrap();
        let (g, dx) = m.backward(&c, &Tensor::zeros(&y.shape)).unwrap();
        assert!(dx.data.iter().all(|&v| v == 0.0));
        assert!(g.0.iter().flat_map(|t| &t.data).all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut m = ModelParams::new(vec![Layer::conv("a", 2, 2, 3, 1, 1)]).seeded(6);
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let z = Grads::zeros_like(&m);
        adam_step(&mut m, &z, &mut s, 0.1).unwrap();
        assert_eq!(m, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_quadratic_against_scalar_recurrence() {
        // w² with a 1×1 linear weight: the gradient is 2w
        let mut m = ModelParams::new(vec![Layer::linear("w", 1, 1)]);
        m.params_mut()[0].data[0] = 1.0;
        let mut s = AdamState::new(&m);
        let (mut w, mut mm, mut vv) = (1.0f64, 0.0f64, 0.0f64);
        let mut reached = None;
        for step in 1..=200 {
            let cur = m.params()[0].data[0];
            let mut g = Grads::zeros_like(&m);
            g.0[0].data[0] = 2.0 * cur;
            adam_step(&mut m, &g, &mut s, 0.1).unwrap();
            let gw = 2.0 * w;
            mm = 0.9 * mm + 0.1 * gw;
            vv = 0.999 * vv + 0.001 * gw * gw;
            w -= 0.1 * (mm / (1.0 - 0.9f64.powi(step))) / ((vv / (1.0 - 0.999f64.powi(step))).sqrt() + 1e-8);
            assert!((m.params()[0].data[0] - w).abs() <= 1e-12);
            if reached.is_none() && w.abs() < 0.05 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "final w {w}");
    }

    #[test]
    fn adam_deterministic() {
        let run = || {
            let mut m = ModelParams::new(vec![Layer::conv("a", 3, 4, 3, 1, 1), Layer::glu("g")]).seeded(9);
            let mut s = AdamState::new(&m);
            let x = rand_tensor(&[3, 12], &mut ChaCha8Rng::seed_from_u64(10));
            for _ in 0..5 {
                let (y, c) = m.forward_cached(&x).unwrap();
                let (g, _) = m.backward(&c, &y).unwrap();
                adam_step(&mut m, &g, &mut s, 1e-2).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }
}
