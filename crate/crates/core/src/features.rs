//! Mel-cepstral coding of spectral envelopes, log-F0 statistics, and
//! per-dimension normalization.
//!
//! The coding warps the frequency axis with a first-order all-pass
//! function `θ(ω) = ω + 2·atan(α·sin ω / (1 − α·cos ω))` and takes the
//! cosine transform of the log power envelope on the warped axis.
//! Coefficient `c_m` is `(1/π) ∫₀^π L(θ) cos(mθ) dθ`, evaluated as a
//! quadrature over the linear FFT bins with the warp's Jacobian, so that
//! with `α = 0` it is exactly the inverse DFT of the log envelope.

use crate::vocoder::{F0Track, ENVELOPE_FLOOR};
use crate::{Error, Result};

pub const DEFAULT_ORDER: usize = 24;
/// Warping constant approximating the mel scale at 16 kHz.
pub const DEFAULT_ALPHA: f64 = 0.42;
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub order: usize,
    pub alpha: f64,
    /// Keep c0 out of the generator and copy it from the input.
    pub energy_passthrough: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, alpha: DEFAULT_ALPHA, energy_passthrough: false }
    }
}

impl FeatureConfig {
    /// Channels seen by the generator.
    pub fn model_dim(&self) -> usize {
        if self.energy_passthrough {
            self.order
        } else {
            self.order + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !(self.alpha.abs() < 1.0) {
            return Err(Error::InvalidArch(format!("feature order {} / alpha {} out of range", self.order, self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McepSequence {
    /// frames × (order + 1)
    pub coeffs: Vec<Vec<f64>>,
    pub order: usize,
    pub alpha: f64,
}

impl McepSequence {
    pub fn frames(&self) -> usize {
        self.coeffs.len()
    }

    pub fn width(&self) -> usize {
        self.order + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Stats {
    pub mean_log_f0: f64,
    pub std_log_f0: f64,
    pub voiced_frame_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Warped frequency of `omega` (radians, 0..=π).
pub fn warp(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin() / (1.0 - alpha * omega.cos())).atan()
}

/// dθ/dω of [`warp`].
pub fn warp_slope(omega: f64, alpha: f64) -> f64 {
    (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * omega.cos() + alpha * alpha)
}

fn check_order(order: usize, bins: usize) -> Result<()> {
    if order == 0 || order > bins - 1 {
        return Err(Error::DimensionMismatch { expected: bins - 1, got: order });
    }
    Ok(())
}

/// Analysis basis: `basis[m][k] = w_k · θ'(ω_k) · cos(m·θ(ω_k))`.
fn analysis_basis(order: usize, bins: usize, alpha: f64) -> Vec<Vec<f64>> {
    let n = (bins - 1) * 2;
    let step = std::f64::consts::PI / (bins - 1) as f64;
    let pts: Vec<(f64, f64)> = (0..bins)
        .map(|k| {
            let omega = k as f64 * step;
            let weight = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 } / n as f64;
            (warp(omega, alpha), weight * warp_slope(omega, alpha))
        })
        .collect();
    (0..=order)
        .map(|m| pts.iter().map(|&(theta, wt)| wt * (m as f64 * theta).cos()).collect())
        .collect()
}

pub fn sp_to_mcep(sp: &[Vec<f64>], order: usize, alpha: f64) -> Result<McepSequence> {
    let bins = sp.first().map(|r| r.len()).unwrap_or(DEFAULT_ORDER + 2);
    if bins < 3 || !(bins - 1).is_power_of_two() {
        return Err(Error::DimensionMismatch { expected: 513, got: bins });
    }
    check_order(order, bins)?;
    let basis = analysis_basis(order, bins, alpha);
    let mut coeffs = Vec::with_capacity(sp.len());
    for (i, row) in sp.iter().enumerate() {
        if row.len() != bins {
            return Err(Error::DimensionMismatch { expected: bins, got: row.len() });
        }
        if let Some(bin) = row.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveEnvelope { frame: i, bin });
        }
        let log: Vec<f64> = row.iter().map(|v| v.ln()).collect();
        coeffs.push(basis.iter().map(|b| b.iter().zip(&log).map(|(x, y)| x * y).sum()).collect());
    }
    Ok(McepSequence { coeffs, order, alpha })
}

pub fn mcep_to_sp(m: &McepSequence, fft_size: usize) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let step = std::f64::consts::PI / (bins - 1) as f64;
    let half = fft_size / 2;
    // synthesis basis: cosine series on the warped axis, sampled at warped bins
    let basis: Vec<Vec<f64>> = (0..bins)
        .map(|k| {
            let theta = warp(k as f64 * step, m.alpha);
            (0..=m.order)
                .map(|j| {
                    let mult = if j == 0 || j == half { 1.0 } else { 2.0 };
                    mult * (j as f64 * theta).cos()
                })
                .collect()
        })
        .collect();
    m.coeffs
        .iter()
        .map(|c| {
            basis
                .iter()
                .map(|b| {
                    let l: f64 = b.iter().zip(c).map(|(x, y)| x * y).sum();
                    l.exp().max(ENVELOPE_FLOOR)
                })
                .collect()
        })
        .collect()
}

/// Log-F0 mean and standard deviation over the voiced frames of `tracks`.
pub fn compute_f0_stats(tracks: &[F0Track]) -> Result<F0Stats> {
    // Welford accumulation
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for f in tracks.iter().flat_map(|t| t.voiced()) {
        n += 1;
        let x = f.ln();
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    if n < 2 {
        return Err(Error::InsufficientVoicedFrames(n));
    }
    let std = (m2 / n as f64).sqrt().max(STD_FLOOR);
    Ok(F0Stats { mean_log_f0: mean, std_log_f0: std, voiced_frame_count: n })
}

/// Log-Gaussian F0 mapping from `src` statistics to `tgt`. Voicing is untouched.
pub fn convert_log_f0(track: &F0Track, src: &F0Stats, tgt: &F0Stats) -> F0Track {
    if src.mean_log_f0 == tgt.mean_log_f0 && src.std_log_f0 == tgt.std_log_f0 {
        return track.clone();
    }
    let scale = tgt.std_log_f0 / src.std_log_f0;
    let values_hz = track
        .values_hz
        .iter()
        .map(|&f| if f > 0.0 { ((f.ln() - src.mean_log_f0) * scale + tgt.mean_log_f0).exp() } else { 0.0 })
        .collect();
    F0Track { values_hz, frame_period_ms: track.frame_period_ms }
}

impl FeatureStats {
    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Per-dimension mean and (population) standard deviation over every
    /// frame of every sequence.
    pub fn from_corpus<'a>(seqs: impl IntoIterator<Item = &'a McepSequence>) -> Result<Self> {
        let mut width = None;
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut frames: Vec<&[f64]> = Vec::new();
        for s in seqs {
            let w = *width.get_or_insert(s.width());
            if s.width() != w {
                return Err(Error::DimensionMismatch { expected: w, got: s.width() });
            }
            if sum.is_empty() {
                sum = vec![0.0; w];
            }
            for row in &s.coeffs {
                n += 1;
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
                frames.push(row);
            }
        }
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for row in frames {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    fn check(&self, m: &McepSequence) -> Result<()> {
        if m.width() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), got: m.width() });
        }
        Ok(())
    }

    pub fn normalize(&self, m: &McepSequence) -> Result<McepSequence> {
        self.check(m)?;
        let coeffs = m
            .coeffs
            .iter()
            .map(|r| r.iter().zip(&self.mean).zip(&self.std).map(|((x, mu), sd)| (x - mu) / sd).collect())
            .collect();
        Ok(McepSequence { coeffs, ..m.clone_empty() })
    }

    pub fn denormalize(&self, m: &McepSequence) -> Result<McepSequence> {
        self.check(m)?;
        let coeffs = m
            .coeffs
            .iter()
            .map(|r| r.iter().zip(&self.mean).zip(&self.std).map(|((x, mu), sd)| x * sd + mu).collect())
            .collect();
        Ok(McepSequence { coeffs, ..m.clone_empty() })
    }
}

impl McepSequence {
    fn clone_empty(&self) -> Self {
        Self { coeffs: Vec::new(), order: self.order, alpha: self.alpha }
    }
}
