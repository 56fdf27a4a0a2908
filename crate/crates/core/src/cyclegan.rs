//! Two-generator, two-discriminator conversion model trained on unpaired
//! feature corpora, plus the frozen inference bundle and its `.eflt` file.
//!
//! Domain X is the emotional corpus, Y the neutral one. `gen_xy` (X→Y) is
//! the deployed direction.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{F0Stats, FeatureConfig, FeatureStats, McepSequence};
use crate::nn::{adam_step, AdamState, Grads, Layer, ModelParams, Tensor};
use crate::vocoder::VocoderConfig;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 2;
const MAGIC: &[u8; 4] = b"EFLT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchDescriptor {
    /// Feature channels in and out of the generators.
    pub feature_dim: usize,
    /// Width after the input layer; 0 collapses each generator to a single
    /// kernel-1 convolution.
    pub gen_hidden: usize,
    /// ×2 down- (and matching up-) sampling stages; widths double per stage.
    pub gen_downsample: usize,
    pub gen_res_blocks: usize,
    pub gen_kernel: usize,
    pub gen_res_kernel: usize,
    /// Add the input back onto the generator output (ignored when
    /// `gen_hidden` is 0).
    pub gen_skip: bool,
    pub disc_hidden: usize,
    /// Gated conv layers before the patch head.
    pub disc_layers: usize,
    pub disc_kernel: usize,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        Self {
            feature_dim: 25,
            gen_hidden: 16,
            gen_downsample: 2,
            gen_res_blocks: 3,
            gen_kernel: 5,
            gen_res_kernel: 3,
            gen_skip: true,
            disc_hidden: 16,
            disc_layers: 4,
            disc_kernel: 3,
        }
    }
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArch(m.into()));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.gen_hidden > 0 {
            if self.gen_kernel % 2 == 0 || self.gen_res_kernel % 2 == 0 {
                return bad("generator kernels must be odd");
            }
            if self.gen_downsample > 6 {
                return bad("at most 6 downsampling stages");
            }
        }
        if self.disc_hidden == 0 || self.disc_layers == 0 || self.disc_kernel % 2 == 0 {
            return bad("discriminator needs positive width, at least one layer, and an odd kernel");
        }
        Ok(())
    }

    /// Frames a generator input must be a multiple of.
    pub fn time_multiple(&self) -> usize {
        if self.gen_hidden == 0 {
            1
        } else {
            1 << self.gen_downsample
        }
    }

    fn stage_width(&self, i: usize) -> usize {
        self.gen_hidden << i
    }

    fn disc_width(&self, i: usize) -> usize {
        self.disc_hidden << i.min(2)
    }

    /// Generator receptive field in frames.
    pub fn receptive_field(&self) -> usize {
        if self.gen_hidden == 0 {
            return 1;
        }
        let (k, rk, d) = (self.gen_kernel, self.gen_res_kernel, self.gen_downsample);
        let mut rf = k;
        let mut jump = 1;
        for _ in 0..d {
            rf += (k - 1) * jump;
            jump *= 2;
        }
        rf += self.gen_res_blocks * 2 * (rk - 1) * jump;
        for _ in 0..d {
            jump /= 2;
            rf += (k - 1) * jump;
        }
        rf + (k - 1)
    }
}

pub fn build_generator(a: &ArchDescriptor) -> ModelParams {
    let dim = a.feature_dim;
    if a.gen_hidden == 0 {
        return ModelParams::new(vec![Layer::conv("out", dim, dim, 1, 1, 0)]);
    }
    let (k, p) = (a.gen_kernel, a.gen_kernel / 2);
    let h = a.gen_hidden;
    let mut layers = vec![Layer::conv("in", dim, 2 * h, k, 1, p), Layer::glu("in.glu")];
    for i in 0..a.gen_downsample {
        let (ci, co) = (a.stage_width(i), a.stage_width(i + 1));
        let n = format!("down{i}");
        layers.push(Layer::conv(&n, ci, 2 * co, k, 2, p));
        layers.push(Layer::norm(&format!("{n}.norm"), 2 * co));
        layers.push(Layer::glu(&format!("{n}.glu")));
    }
    let c = a.stage_width(a.gen_downsample);
    let (rk, rp) = (a.gen_res_kernel, a.gen_res_kernel / 2);
    for i in 0..a.gen_res_blocks {
        let n = format!("res{i}");
        layers.push(Layer::Residual {
            name: n.clone(),
            body: vec![
                Layer::conv(&format!("{n}.a"), c, 2 * c, rk, 1, rp),
                Layer::norm(&format!("{n}.a.norm"), 2 * c),
                Layer::glu(&format!("{n}.a.glu")),
                Layer::conv(&format!("{n}.b"), c, c, rk, 1, rp),
                Layer::norm(&format!("{n}.b.norm"), c),
            ],
        });
    }
    for i in (0..a.gen_downsample).rev() {
        let (ci, co) = (a.stage_width(i + 1), a.stage_width(i));
        let n = format!("up{i}");
        layers.push(Layer::Upsample1d { name: format!("{n}.repeat"), factor: 2 });
        layers.push(Layer::conv(&n, ci, 2 * co, k, 1, p));
        layers.push(Layer::norm(&format!("{n}.norm"), 2 * co));
        layers.push(Layer::glu(&format!("{n}.glu")));
    }
    layers.push(Layer::conv("out", h, dim, k, 1, p));
    if a.gen_skip {
        layers = vec![Layer::Residual { name: "skip".into(), body: layers }];
    }
    ModelParams::new(layers)
}

pub fn build_discriminator(a: &ArchDescriptor) -> ModelParams {
    let (k, p) = (a.disc_kernel, a.disc_kernel / 2);
    let mut layers = vec![Layer::conv("in", a.feature_dim, 2 * a.disc_width(0), k, 1, p), Layer::glu("in.glu")];
    for i in 1..a.disc_layers {
        let (ci, co) = (a.disc_width(i - 1), a.disc_width(i));
        let n = format!("l{i}");
        layers.push(Layer::conv(&n, ci, 2 * co, k, 2, p));
        layers.push(Layer::norm(&format!("{n}.norm"), 2 * co));
        layers.push(Layer::glu(&format!("{n}.glu")));
    }
    layers.push(Layer::conv("head", a.disc_width(a.disc_layers - 1), 1, k, 1, p));
    ModelParams::new(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleGanModel {
    pub gen_xy: ModelParams,
    pub gen_yx: ModelParams,
    pub disc_x: ModelParams,
    pub disc_y: ModelParams,
    pub arch: ArchDescriptor,
}

pub fn build_model(arch: &ArchDescriptor, seed: u64) -> Result<CycleGanModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = [build_generator(arch), build_generator(arch), build_discriminator(arch), build_discriminator(arch)];
    for n in nets.iter_mut() {
        n.init_glorot(&mut rng);
    }
    let [gen_xy, gen_yx, disc_x, disc_y] = nets;
    Ok(CycleGanModel { gen_xy, gen_yx, disc_x, disc_y, arch: *arch })
}

impl CycleGanModel {
    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    fn nets(&self) -> [&ModelParams; 4] {
        [&self.gen_xy, &self.gen_yx, &self.disc_x, &self.disc_y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub identity_cutoff_iter: usize,
    /// Trailing fraction of the run over which both learning rates fall
    /// linearly to zero; 0 keeps them constant.
    pub lr_decay_fraction: f64,
    pub segment_frames: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7500,
            lr_generator: 2e-4,
            lr_discriminator: 1e-4,
            lambda_cycle: 10.0,
            lambda_identity: 5.0,
            identity_cutoff_iter: 2500,
            lr_decay_fraction: 0.5,
            segment_frames: 128,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchDescriptor) -> Result<()> {
        let rates = [self.lr_generator, self.lr_discriminator];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArch("learning rates must be positive".into()));
        }
        if !(self.lambda_cycle >= 0.0 && self.lambda_identity >= 0.0) {
            return Err(Error::InvalidArch("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_fraction) {
            return Err(Error::InvalidArch("lr_decay_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::InvalidArch("only batch_size 1 is supported".into()));
        }
        let m = arch.time_multiple();
        if self.segment_frames % m != 0 || self.segment_frames < arch.receptive_field().min(8 * m) {
            return Err(Error::InvalidArch(format!(
                "segment_frames {} must be a multiple of {m} and at least {}",
                self.segment_frames,
                arch.receptive_field().min(8 * m)
            )));
        }
        Ok(())
    }

    /// Learning-rate multiplier at `iter`.
    pub fn lr_scale(&self, iter: usize) -> f64 {
        let span = (self.lr_decay_fraction * self.iterations as f64).round() as usize;
        let start = self.iterations - span.min(self.iterations);
        if span == 0 || iter < start {
            1.0
        } else {
            self.iterations.saturating_sub(iter) as f64 / span as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBundle {
    /// LSGAN generator term, `D_Y(G(x))` plus `D_X(F(y))` parts.
    pub adv_g: f64,
    pub adv_g_x: f64,
    pub adv_g_y: f64,
    /// LSGAN discriminator term over both domains.
    pub adv_d: f64,
    pub adv_d_x: f64,
    pub adv_d_y: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total_g: f64,
    pub total_d: f64,
}

fn mean_sq_to(t: &Tensor, target: f64) -> f64 {
    t.data.iter().map(|v| (v - target).powi(2)).sum::<f64>() / t.len() as f64
}

fn l1(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
}

fn d_mean_sq(t: &Tensor, target: f64, scale: f64) -> Tensor {
    let k = 2.0 * scale / t.len() as f64;
    t.map(|v| k * (v - target))
}

fn d_l1(a: &Tensor, b: &Tensor, scale: f64) -> Tensor {
    let k = scale / a.len() as f64;
    let data = a.data.iter().zip(&b.data).map(|(p, q)| k * sign(p - q)).collect();
    Tensor { shape: a.shape.clone(), data }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn identity_active(cfg: &TrainConfig, iter: usize) -> bool {
    iter < cfg.identity_cutoff_iter
}

fn check_segment(m: &CycleGanModel, s: &Tensor) -> Result<()> {
    let (c, t) = s.ct()?;
    if c != m.arch.feature_dim || t % m.arch.time_multiple() != 0 {
        return Err(Error::ShapeMismatch(format!(
            "segment [{c}, {t}] needs {} channels and a multiple of {} frames",
            m.arch.feature_dim,
            m.arch.time_multiple()
        )));
    }
    Ok(())
}

/// Every loss term at the current parameters, without updating anything.
pub fn compute_losses(m: &CycleGanModel, x: &Tensor, y: &Tensor, cfg: &TrainConfig, iter: usize) -> Result<LossBundle> {
    check_segment(m, x)?;
    check_segment(m, y)?;
    let fake_y = m.gen_xy.forward(x)?;
    let fake_x = m.gen_yx.forward(y)?;
    let cyc_x = m.gen_yx.forward(&fake_y)?;
    let cyc_y = m.gen_xy.forward(&fake_x)?;
    let dy_fake = m.disc_y.forward(&fake_y)?;
    let dx_fake = m.disc_x.forward(&fake_x)?;
    let dy_real = m.disc_y.forward(y)?;
    let dx_real = m.disc_x.forward(x)?;
    let mut b = LossBundle {
        adv_g_y: mean_sq_to(&dy_fake, 1.0),
        adv_g_x: mean_sq_to(&dx_fake, 1.0),
        adv_d_y: mean_sq_to(&dy_real, 1.0) + mean_sq_to(&dy_fake, 0.0),
        adv_d_x: mean_sq_to(&dx_real, 1.0) + mean_sq_to(&dx_fake, 0.0),
        cycle: l1(&cyc_x, x) + l1(&cyc_y, y),
        ..Default::default()
    };
    if identity_active(cfg, iter) {
        b.identity = l1(&m.gen_xy.forward(y)?, y) + l1(&m.gen_yx.forward(x)?, x);
    }
    b.adv_g = b.adv_g_x + b.adv_g_y;
    b.adv_d = b.adv_d_x + b.adv_d_y;
    b.total_g = b.adv_g + cfg.lambda_cycle * b.cycle + cfg.lambda_identity * b.identity;
    b.total_d = b.adv_d;
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerStates {
    pub gen_xy: AdamState,
    pub gen_yx: AdamState,
    pub disc_x: AdamState,
    pub disc_y: AdamState,
}

impl OptimizerStates {
    pub fn new(m: &CycleGanModel) -> Self {
        Self {
            gen_xy: AdamState::new(&m.gen_xy),
            gen_yx: AdamState::new(&m.gen_yx),
            disc_x: AdamState::new(&m.disc_x),
            disc_y: AdamState::new(&m.disc_y),
        }
    }
}

/// One discriminator update followed by one generator update.
///
/// Discriminator losses in the returned bundle are measured before the
/// discriminator update; generator losses after it, at the parameters the
/// generator gradient is taken from.
pub fn train_step(
    m: &mut CycleGanModel,
    opt: &mut OptimizerStates,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<LossBundle> {
    check_segment(m, x)?;
    check_segment(m, y)?;
    let mut b = LossBundle::default();

    let (fake_y, c_fake_y) = m.gen_xy.forward_cached(x)?;
    let (fake_x, c_fake_x) = m.gen_yx.forward_cached(y)?;

    // discriminators
    for (disc, state, real, fake, lx) in [
        (&mut m.disc_y, &mut opt.disc_y, y, &fake_y, &mut b.adv_d_y),
        (&mut m.disc_x, &mut opt.disc_x, x, &fake_x, &mut b.adv_d_x),
    ] {
        let (o_real, c_real) = disc.forward_cached(real)?;
        let (o_fake, c_fake) = disc.forward_cached(fake)?;
        *lx = mean_sq_to(&o_real, 1.0) + mean_sq_to(&o_fake, 0.0);
        let (mut g, _) = disc.backward(&c_real, &d_mean_sq(&o_real, 1.0, 1.0))?;
        g.add_assign(&disc.backward(&c_fake, &d_mean_sq(&o_fake, 0.0, 1.0))?.0);
        adam_step(disc, &g, state, cfg.lr_discriminator * cfg.lr_scale(iter))?;
    }
    b.adv_d = b.adv_d_x + b.adv_d_y;
    b.total_d = b.adv_d;

    // generators
    let mut g_xy = Grads::zeros_like(&m.gen_xy);
    let mut g_yx = Grads::zeros_like(&m.gen_yx);

    let (o, c) = m.disc_y.forward_cached(&fake_y)?;
    b.adv_g_y = mean_sq_to(&o, 1.0);
    let mut d_fake_y = m.disc_y.backward(&c, &d_mean_sq(&o, 1.0, 1.0))?.1;
    let (o, c) = m.disc_x.forward_cached(&fake_x)?;
    b.adv_g_x = mean_sq_to(&o, 1.0);
    let mut d_fake_x = m.disc_x.backward(&c, &d_mean_sq(&o, 1.0, 1.0))?.1;

    let (cyc_x, c) = m.gen_yx.forward_cached(&fake_y)?;
    let (g, d) = m.gen_yx.backward(&c, &d_l1(&cyc_x, x, cfg.lambda_cycle))?;
    g_yx.add_assign(&g);
    add_into(&mut d_fake_y, &d);
    let (cyc_y, c) = m.gen_xy.forward_cached(&fake_x)?;
    let (g, d) = m.gen_xy.backward(&c, &d_l1(&cyc_y, y, cfg.lambda_cycle))?;
    g_xy.add_assign(&g);
    add_into(&mut d_fake_x, &d);
    b.cycle = l1(&cyc_x, x) + l1(&cyc_y, y);

    if identity_active(cfg, iter) {
        let (id_y, c) = m.gen_xy.forward_cached(y)?;
        g_xy.add_assign(&m.gen_xy.backward(&c, &d_l1(&id_y, y, cfg.lambda_identity))?.0);
        let (id_x, c) = m.gen_yx.forward_cached(x)?;
        g_yx.add_assign(&m.gen_yx.backward(&c, &d_l1(&id_x, x, cfg.lambda_identity))?.0);
        b.identity = l1(&id_y, y) + l1(&id_x, x);
    }

    g_xy.add_assign(&m.gen_xy.backward(&c_fake_y, &d_fake_y)?.0);
    g_yx.add_assign(&m.gen_yx.backward(&c_fake_x, &d_fake_x)?.0);
    let lr = cfg.lr_generator * cfg.lr_scale(iter);
    adam_step(&mut m.gen_xy, &g_xy, &mut opt.gen_xy, lr)?;
    adam_step(&mut m.gen_yx, &g_yx, &mut opt.gen_yx, lr)?;

    b.adv_g = b.adv_g_x + b.adv_g_y;
    b.total_g = b.adv_g + cfg.lambda_cycle * b.cycle + cfg.lambda_identity * b.identity;
    Ok(b)
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    a.data.iter_mut().zip(&b.data).for_each(|(p, q)| *p += q);
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub losses: Vec<LossBundle>,
    pub iteration_secs: Vec<f64>,
    /// Sampled segments that came from utterances shorter than
    /// `segment_frames` and were zero-padded.
    pub padded_segments: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

/// `[width, frames]` tensor of `m`, channels-first.
pub fn to_tensor(m: &McepSequence) -> Result<Tensor> {
    let (t, c) = (m.frames(), m.width());
    let mut data = vec![0.0; c * t];
    for (j, row) in m.coeffs.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            data[i * t + j] = *v;
        }
    }
    Tensor::from_vec(&[c, t], data)
}

pub fn from_tensor(t: &Tensor, like: &McepSequence) -> McepSequence {
    let (c, n) = (t.shape[0], t.shape[1]);
    let coeffs = (0..n).map(|j| (0..c).map(|i| t.data[i * n + j]).collect()).collect();
    McepSequence { coeffs, order: c - 1, alpha: like.alpha }
}

/// Random `segment_frames` crop of a random utterance; short utterances are
/// zero-padded at the end.
fn sample_segment(corpus: &[McepSequence], len: usize, rng: &mut ChaCha8Rng) -> (Tensor, bool) {
    let s = &corpus[rng.random_range(0..corpus.len())];
    let (c, n) = (s.width(), s.frames());
    let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
    let mut data = vec![0.0; c * len];
    for j in 0..len.min(n) {
        for (i, v) in s.coeffs[start + j].iter().enumerate() {
            data[i * len + j] = *v;
        }
    }
    (Tensor { shape: vec![c, len], data }, n < len)
}

pub fn train(
    corpus_x: &[McepSequence],
    corpus_y: &[McepSequence],
    arch: &ArchDescriptor,
    cfg: &TrainConfig,
) -> Result<(CycleGanModel, TrainHistory)> {
    train_with(corpus_x, corpus_y, arch, cfg, |_, _| {})
}

/// [`train`] with a per-iteration callback.
pub fn train_with(
    corpus_x: &[McepSequence],
    corpus_y: &[McepSequence],
    arch: &ArchDescriptor,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(usize, &LossBundle),
) -> Result<(CycleGanModel, TrainHistory)> {
    arch.validate()?;
    cfg.validate(arch)?;
    let nonempty = |c: &[McepSequence]| c.iter().any(|s| s.frames() > 0);
    if !nonempty(corpus_x) || !nonempty(corpus_y) {
        return Err(Error::EmptyCorpus);
    }
    for s in corpus_x.iter().chain(corpus_y) {
        if s.width() != arch.feature_dim {
            return Err(Error::DimensionMismatch { expected: arch.feature_dim, got: s.width() });
        }
    }
    let cx: Vec<McepSequence> = corpus_x.iter().filter(|s| s.frames() > 0).cloned().collect();
    let cy: Vec<McepSequence> = corpus_y.iter().filter(|s| s.frames() > 0).cloned().collect();
    let mut model = build_model(arch, cfg.seed)?;
    let mut opt = OptimizerStates::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let mut hist = TrainHistory::default();
    for iter in 0..cfg.iterations {
        let t0 = Instant::now();
        let (x, px) = sample_segment(&cx, cfg.segment_frames, &mut rng);
        let (y, py) = sample_segment(&cy, cfg.segment_frames, &mut rng);
        hist.padded_segments += px as usize + py as usize;
        let b = train_step(&mut model, &mut opt, &x, &y, cfg, iter)?;
        hist.losses.push(b);
        hist.iteration_secs.push(t0.elapsed().as_secs_f64());
        on_iter(iter, &b);
    }
    Ok((model, hist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    /// Weights stored and applied as 32-bit floats; arithmetic stays 64-bit.
    F32,
}

/// Deployable X→Y filter: generator weights and every statistic needed to
/// run the conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFilter {
    pub gen_xy: ModelParams,
    pub arch: ArchDescriptor,
    pub f0_src: F0Stats,
    pub f0_tgt: F0Stats,
    pub mcep_src: FeatureStats,
    pub mcep_tgt: FeatureStats,
    pub vocoder: VocoderConfig,
    pub features: FeatureConfig,
    pub precision: Precision,
    pub version: u32,
}

pub fn freeze(
    m: &CycleGanModel,
    f0_src: F0Stats,
    f0_tgt: F0Stats,
    mcep_src: FeatureStats,
    mcep_tgt: FeatureStats,
    vocoder: VocoderConfig,
    features: FeatureConfig,
) -> FrozenFilter {
    FrozenFilter {
        gen_xy: m.gen_xy.clone(),
        arch: m.arch,
        f0_src,
        f0_tgt,
        mcep_src,
        mcep_tgt,
        vocoder,
        features,
        precision: Precision::F64,
        version: FORMAT_VERSION,
    }
}

impl FrozenFilter {
    /// Same filter with weights rounded to 32-bit.
    pub fn to_f32(&self) -> Self {
        let mut f = self.clone();
        for p in f.gen_xy.params_mut() {
            p.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        f.precision = Precision::F32;
        f
    }

    /// Filter whose generator is an exact identity and whose F0 mapping is
    /// a no-op; useful as a passthrough reference.
    pub fn identity(vocoder: VocoderConfig, features: FeatureConfig) -> Self {
        let dim = features.model_dim();
        let arch = ArchDescriptor { feature_dim: dim, gen_hidden: 0, ..Default::default() };
        let mut gen = build_generator(&arch);
        let w = gen.params_mut().remove(0);
        for i in 0..dim {
            w.data[i * dim + i] = 1.0;
        }
        let f0 = F0Stats { mean_log_f0: 0.0, std_log_f0: 1.0, voiced_frame_count: 0 };
        FrozenFilter {
            gen_xy: gen,
            arch,
            f0_src: f0,
            f0_tgt: f0,
            mcep_src: FeatureStats::identity(features.order + 1),
            mcep_tgt: FeatureStats::identity(features.order + 1),
            vocoder,
            features,
            precision: Precision::F64,
            version: FORMAT_VERSION,
        }
    }

    /// Run the generator on already-normalized features of the model width.
    pub fn apply_generator(&self, m: &McepSequence) -> Result<McepSequence> {
        let x = to_tensor(m)?;
        let (c, n) = x.ct()?;
        let mult = self.arch.time_multiple();
        let padded = n.div_ceil(mult) * mult;
        // replicate the last frame up to the next multiple
        let mut data = vec![0.0; c * padded];
        for i in 0..c {
            let row = x.row(i);
            for j in 0..padded {
                data[i * padded + j] = row[j.min(n - 1)];
            }
        }
        let y = self.gen_xy.forward(&Tensor { shape: vec![c, padded], data })?;
        let (co, _) = y.ct()?;
        let mut out = vec![0.0; co * n];
        for i in 0..co {
            out[i * n..(i + 1) * n].copy_from_slice(&y.row(i)[..n]);
        }
        Ok(from_tensor(&Tensor { shape: vec![co, n], data: out }, m))
    }

    /// Normalize with source statistics, convert, denormalize with target
    /// statistics.
    pub fn convert(&self, m: &McepSequence) -> Result<McepSequence> {
        if m.frames() == 0 {
            return Ok(m.clone());
        }
        let norm = self.mcep_src.normalize(m)?;
        let conv = if self.features.energy_passthrough {
            let mut body = norm.clone();
            body.coeffs.iter_mut().for_each(|r| {
                r.remove(0);
            });
            body.order -= 1;
            let out = self.apply_generator(&body)?;
            let coeffs = norm
                .coeffs
                .iter()
                .zip(&out.coeffs)
                .map(|(src, g)| std::iter::once(src[0]).chain(g.iter().copied()).collect())
                .collect();
            McepSequence { coeffs, order: norm.order, alpha: norm.alpha }
        } else {
            self.apply_generator(&norm)?
        };
        let mut out = self.mcep_tgt.denormalize(&conv)?;
        if self.features.energy_passthrough {
            out.coeffs.iter_mut().zip(&m.coeffs).for_each(|(o, r)| o[0] = r[0]);
        }
        out.alpha = m.alpha;
        Ok(out)
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn arch_header(a: &ArchDescriptor, h: &mut Vec<(String, String)>) {
    for (k, v) in [
        ("feature_dim", a.feature_dim),
        ("gen_hidden", a.gen_hidden),
        ("gen_downsample", a.gen_downsample),
        ("gen_res_blocks", a.gen_res_blocks),
        ("gen_kernel", a.gen_kernel),
        ("gen_res_kernel", a.gen_res_kernel),
        ("disc_hidden", a.disc_hidden),
        ("disc_layers", a.disc_layers),
        ("disc_kernel", a.disc_kernel),
    ] {
        h.push((format!("arch.{k}"), v.to_string()));
    }
    h.push(("arch.gen_skip".into(), a.gen_skip.to_string()));
}

fn write_container(mut w: impl Write, header: &[(String, String)], nets: &[&ModelParams], precision: Precision) -> Result<u64> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    for n in nets {
        for p in n.params() {
            for v in &p.data {
                match precision {
                    Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => buf.extend_from_slice(&(*v as f32).to_le_bytes()),
                }
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

struct Container {
    header: Vec<(String, String)>,
    blob: Vec<u8>,
}

impl Container {
    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::CorruptFile(format!("missing header key {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse().map_err(|_| Error::CorruptFile(format!("bad value for {key}")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let s = self.get(key)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|v| v.parse().map_err(|_| Error::CorruptFile(format!("bad value in {key}")))).collect()
    }

    fn arch(&self) -> Result<ArchDescriptor> {
        Ok(ArchDescriptor {
            feature_dim: self.parse("arch.feature_dim")?,
            gen_hidden: self.parse("arch.gen_hidden")?,
            gen_downsample: self.parse("arch.gen_downsample")?,
            gen_res_blocks: self.parse("arch.gen_res_blocks")?,
            gen_kernel: self.parse("arch.gen_kernel")?,
            gen_res_kernel: self.parse("arch.gen_res_kernel")?,
            gen_skip: self.parse("arch.gen_skip")?,
            disc_hidden: self.parse("arch.disc_hidden")?,
            disc_layers: self.parse("arch.disc_layers")?,
            disc_kernel: self.parse("arch.disc_kernel")?,
        })
    }

    fn precision(&self) -> Result<Precision> {
        match self.get("precision")? {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            p => Err(Error::CorruptFile(format!("unknown precision {p}"))),
        }
    }

    /// Fill `nets` from the weight blob, in order.
    fn fill(&self, nets: &mut [&mut ModelParams], precision: Precision) -> Result<()> {
        let width = if precision == Precision::F64 { 8 } else { 4 };
        let need: usize = nets.iter().map(|n| n.param_count()).sum::<usize>() * width;
        if need != self.blob.len() {
            return Err(Error::CorruptFile(format!("weight blob has {} bytes, architecture needs {need}", self.blob.len())));
        }
        let mut chunks = self.blob.chunks_exact(width);
        for n in nets.iter_mut() {
            for p in n.params_mut() {
                for v in p.data.iter_mut() {
                    let c = chunks.next().expect("length checked");
                    *v = if width == 8 {
                        f64::from_le_bytes(c.try_into().expect("8 bytes"))
                    } else {
                        f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                    };
                }
            }
        }
        Ok(())
    }
}

fn read_container(mut r: impl Read) -> Result<Container> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 20 || &buf[..4] != MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    if 16 + hlen > body.len() {
        return Err(Error::CorruptFile("header length past end of file".into()));
    }
    let text = std::str::from_utf8(&body[16..16 + hlen]).map_err(|_| Error::CorruptFile("header is not UTF-8".into()))?;
    let header = text
        .lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::CorruptFile(format!("header line without '=': {l}")))
        })
        .collect::<Result<_>>()?;
    Ok(Container { header, blob: body[16 + hlen..].to_vec() })
}

impl FrozenFilter {
    fn header(&self) -> Vec<(String, String)> {
        let mut h = vec![
            ("kind".to_string(), "filter".to_string()),
            ("precision".into(), if self.precision == Precision::F64 { "f64" } else { "f32" }.into()),
        ];
        arch_header(&self.arch, &mut h);
        for (p, s) in [("f0_src", &self.f0_src), ("f0_tgt", &self.f0_tgt)] {
            h.push((format!("{p}.mean_log_f0"), format!("{:?}", s.mean_log_f0)));
            h.push((format!("{p}.std_log_f0"), format!("{:?}", s.std_log_f0)));
            h.push((format!("{p}.voiced_frame_count"), s.voiced_frame_count.to_string()));
        }
        for (p, s) in [("mcep_src", &self.mcep_src), ("mcep_tgt", &self.mcep_tgt)] {
            h.push((format!("{p}.mean"), fmt_list(&s.mean)));
            h.push((format!("{p}.std"), fmt_list(&s.std)));
        }
        h.push(("vocoder.frame_period_ms".into(), format!("{:?}", self.vocoder.frame_period_ms)));
        h.push(("vocoder.fft_size".into(), self.vocoder.fft_size.to_string()));
        h.push(("vocoder.f0_floor_hz".into(), format!("{:?}", self.vocoder.f0_floor_hz)));
        h.push(("vocoder.f0_ceil_hz".into(), format!("{:?}", self.vocoder.f0_ceil_hz)));
        h.push(("features.order".into(), self.features.order.to_string()));
        h.push(("features.alpha".into(), format!("{:?}", self.features.alpha)));
        h.push(("features.energy_passthrough".into(), self.features.energy_passthrough.to_string()));
        h
    }

    pub fn write_to(&self, w: impl Write) -> Result<u64> {
        write_container(w, &self.header(), &[&self.gen_xy], self.precision)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let c = read_container(r)?;
        if c.get("kind")? != "filter" {
            return Err(Error::CorruptFile("not a filter file".into()));
        }
        let arch = c.arch()?;
        arch.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
        let precision = c.precision()?;
        let mut gen_xy = build_generator(&arch);
        c.fill(&mut [&mut gen_xy], precision)?;
        let f0 = |p: &str| -> Result<F0Stats> {
            Ok(F0Stats {
                mean_log_f0: c.parse(&format!("{p}.mean_log_f0"))?,
                std_log_f0: c.parse(&format!("{p}.std_log_f0"))?,
                voiced_frame_count: c.parse(&format!("{p}.voiced_frame_count"))?,
            })
        };
        let mcep = |p: &str| -> Result<FeatureStats> {
            let s = FeatureStats { mean: c.list(&format!("{p}.mean"))?, std: c.list(&format!("{p}.std"))? };
            if s.mean.len() != s.std.len() {
                return Err(Error::CorruptFile(format!("{p} statistics lengths differ")));
            }
            Ok(s)
        };
        Ok(FrozenFilter {
            gen_xy,
            arch,
            f0_src: f0("f0_src")?,
            f0_tgt: f0("f0_tgt")?,
            mcep_src: mcep("mcep_src")?,
            mcep_tgt: mcep("mcep_tgt")?,
            vocoder: VocoderConfig {
                frame_period_ms: c.parse("vocoder.frame_period_ms")?,
                fft_size: c.parse("vocoder.fft_size")?,
                f0_floor_hz: c.parse("vocoder.f0_floor_hz")?,
                f0_ceil_hz: c.parse("vocoder.f0_ceil_hz")?,
            },
            features: FeatureConfig {
                order: c.parse("features.order")?,
                alpha: c.parse("features.alpha")?,
                energy_passthrough: c.parse("features.energy_passthrough")?,
            },
            precision,
            version: FORMAT_VERSION,
        })
    }
}

pub fn save_filter(f: &FrozenFilter, path: impl AsRef<Path>) -> Result<()> {
    let bytes = f.to_bytes()?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_filter(path: impl AsRef<Path>) -> Result<FrozenFilter> {
    let p = path.as_ref();
    let file = std::fs::File::open(p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
        _ => Error::Io(e),
    })?;
    FrozenFilter::read_from(std::io::BufReader::new(file))
}

/// Full model (all four networks) in the same container layout, for
/// resuming or inspection.
pub fn write_checkpoint(m: &CycleGanModel, w: impl Write) -> Result<u64> {
    let mut h = vec![("kind".to_string(), "checkpoint".to_string()), ("precision".into(), "f64".into())];
    arch_header(&m.arch, &mut h);
    write_container(w, &h, &m.nets(), Precision::F64)
}

pub fn read_checkpoint(r: impl Read) -> Result<CycleGanModel> {
    let c = read_container(r)?;
    if c.get("kind")? != "checkpoint" {
        return Err(Error::CorruptFile("not a checkpoint file".into()));
    }
    let arch = c.arch()?;
    let mut m = build_model(&arch, 0).map_err(|e| Error::CorruptFile(e.to_string()))?;
    c.fill(&mut [&mut m.gen_xy, &mut m.gen_yx, &mut m.disc_x, &mut m.disc_y], Precision::F64)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchDescriptor {
        ArchDescriptor {
            feature_dim: 4,
            gen_hidden: 4,
            gen_downsample: 1,
            gen_res_blocks: 1,
            gen_kernel: 3,
            gen_res_kernel: 3,
            gen_skip: false,
            disc_hidden: 3,
            disc_layers: 2,
            disc_kernel: 3,
        }
    }

    fn rand_seg(c: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[c, t], (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(build_model(&tiny(), 3).unwrap(), build_model(&tiny(), 3).unwrap());
        assert_ne!(build_model(&tiny(), 3).unwrap(), build_model(&tiny(), 4).unwrap());
    }

    #[test]
    fn default_arch_below_half_million() {
        let m = build_model(&ArchDescriptor::default(), 0).unwrap();
        assert!(m.param_count() < 500_000, "{}", m.param_count());
    }

    #[test]
    fn no_residual_blocks_still_runs() {
        let a = ArchDescriptor { gen_res_blocks: 0, ..tiny() };
        let m = build_model(&a, 1).unwrap();
        let y = m.gen_xy.forward(&rand_seg(4, 16, 2)).unwrap();
        assert_eq!(y.shape, vec![4, 16]);
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(matches!(build_model(&ArchDescriptor { gen_kernel: 4, ..tiny() }, 0), Err(Error::InvalidArch(_))));
        assert!(matches!(build_model(&ArchDescriptor { disc_layers: 0, ..tiny() }, 0), Err(Error::InvalidArch(_))));
    }

    #[test]
    fn segment_shape_checked() {
        let m = build_model(&tiny(), 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(compute_losses(&m, &rand_seg(3, 16, 1), &rand_seg(4, 16, 2), &cfg, 0), Err(Error::ShapeMismatch(_))));
        assert!(matches!(compute_losses(&m, &rand_seg(4, 15, 1), &rand_seg(4, 16, 2), &cfg, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        // zero generators map everything to 0; discriminators average the
        // channels, so real all-ones segments score 1 and fakes score 0
        let mut m = build_model(&tiny(), 2).unwrap();
        for g in [&mut m.gen_xy, &mut m.gen_yx] {
            g.params_mut().into_iter().filter(|p| p.shape.len() == 3).for_each(|p| p.data.fill(0.0));
            if let Some(Layer::Conv1d { bias, .. }) = g.layers.last_mut() {
                bias.data.fill(0.0);
            }
        }
        let mut head = Layer::conv("head", 4, 1, 1, 1, 0);
        if let Layer::Conv1d { weight, .. } = &mut head {
            weight.data.fill(0.25);
        }
        m.disc_x = ModelParams::new(vec![head.clone()]);
        m.disc_y = ModelParams::new(vec![head]);
        let ones = Tensor { shape: vec![4, 16], data: vec![1.0; 64] };
        let b = compute_losses(&m, &ones, &ones, &TrainConfig::default(), 0).unwrap();
        assert_eq!(b.adv_d, 0.0);
        assert_eq!(b.adv_g, 2.0);
    }

    #[test]
    fn zero_learning_rate_leaves_model() {
        let mut m = build_model(&tiny(), 5).unwrap();
        let before = m.clone();
        let mut opt = OptimizerStates::new(&m);
        let cfg = TrainConfig { lr_generator: 0.0, lr_discriminator: 0.0, ..Default::default() };
        let b = train_step(&mut m, &mut opt, &rand_seg(4, 16, 6), &rand_seg(4, 16, 7), &cfg, 0).unwrap();
        assert_eq!(m, before);
        assert!(b.total_g > 0.0 && b.total_d > 0.0);
    }

    #[test]
    fn step_losses_match_compute_losses() {
        let mut m = build_model(&tiny(), 8).unwrap();
        let cfg = TrainConfig::default();
        let (x, y) = (rand_seg(4, 16, 9), rand_seg(4, 16, 10));
        let pre = compute_losses(&m, &x, &y, &cfg, 0).unwrap();
        let mut opt = OptimizerStates::new(&m);
        let b = train_step(&mut m, &mut opt, &x, &y, &cfg, 0).unwrap();
        assert!((b.adv_d - pre.adv_d).abs() < 1e-12);
        assert!((b.cycle - pre.cycle).abs() < 1e-12);
        assert!((b.identity - pre.identity).abs() < 1e-12);
    }

    #[test]
    fn filter_round_trip_bytes() {
        let m = build_model(&tiny(), 11).unwrap();
        let f0 = F0Stats { mean_log_f0: 5.1, std_log_f0: 0.2, voiced_frame_count: 100 };
        let f = freeze(&m, f0, f0, FeatureStats::identity(4), FeatureStats::identity(4), VocoderConfig::default(), FeatureConfig { order: 3, ..Default::default() });
        let bytes = f.to_bytes().unwrap();
        let back = FrozenFilter::read_from(&bytes[..]).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_and_version_errors() {
        let f = FrozenFilter::identity(VocoderConfig::default(), FeatureConfig::default());
        let mut bytes = f.to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[0] ^= 0xff;
        assert!(matches!(FrozenFilter::read_from(&flipped[..]), Err(Error::CorruptFile(_))));
        let mut body = bytes.clone();
        let n = body.len();
        body[n / 2] ^= 1;
        assert!(matches!(FrozenFilter::read_from(&body[..]), Err(Error::CorruptFile(_))));
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(FrozenFilter::read_from(&bytes[..]), Err(Error::VersionMismatch(99))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = build_model(&tiny(), 12).unwrap();
        let mut v = Vec::new();
        write_checkpoint(&m, &mut v).unwrap();
        assert_eq!(read_checkpoint(&v[..]).unwrap(), m);
    }

    #[test]
    fn tensor_sequence_round_trip() {
        let m = McepSequence { coeffs: vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], order: 1, alpha: 0.42 };
        let t = to_tensor(&m).unwrap();
        assert_eq!(t.shape, vec![2, 3]);
        assert_eq!(t.data, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(from_tensor(&t, &m), m);
    }

    #[test]
    fn lr_decays_linearly_over_the_tail() {
        let c = TrainConfig { iterations: 10, lr_decay_fraction: 0.5, ..Default::default() };
        let s: Vec<f64> = (0..10).map(|i| c.lr_scale(i)).collect();
        assert_eq!(s, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.8, 0.6, 0.4, 0.2]);
        let flat = TrainConfig { lr_decay_fraction: 0.0, ..c };
        assert!((0..10).all(|i| flat.lr_scale(i) == 1.0));
        assert!(TrainConfig { lr_decay_fraction: 1.5, ..c }.validate(&ArchDescriptor::default()).is_err());
    }
}
