//! Source-filter vocoder: F0, spectral envelope and aperiodicity at a fixed
//! frame rate, and pitch-synchronous resynthesis from those parameters.
//!
//! Conventions shared by analysis and synthesis:
//!
//! * frame `i` is centered on sample `i * hop`; a signal of `n` samples has
//!   `n / hop + 1` frames.
//! * F0 = 0 marks an unvoiced frame; unvoiced frames carry aperiodicity 1.
//! * the spectral envelope is a power spectral density normalized so that
//!   white noise of variance s² analyzes to a flat envelope of s², and a
//!   pulse train of period T through a filter H analyzes to |H|²/T.
//! * aperiodicity is the noise fraction of the envelope power: synthesis
//!   drives pulses with `sp * (1 - ap)` and noise with `sp * ap`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::Waveform;
use crate::dsp::{self, FftPair, C64};
use crate::{Error, Result};

/// Smallest envelope value; keeps logs and cepstra finite.
pub const ENVELOPE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocoderConfig {
    pub frame_period_ms: f64,
    pub fft_size: usize,
    pub f0_floor_hz: f64,
    pub f0_ceil_hz: f64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self { frame_period_ms: 5.0, fft_size: 1024, f0_floor_hz: 71.0, f0_ceil_hz: 800.0 }
    }
}

impl VocoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_period_ms > 0.0 && self.frame_period_ms.is_finite()) {
            return Err(Error::InvalidAnalysis("frame_period_ms must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 512 {
            return Err(Error::InvalidAnalysis("fft_size must be a power of two >= 512".into()));
        }
        if !(self.f0_floor_hz > 0.0 && self.f0_floor_hz < self.f0_ceil_hz) {
            return Err(Error::InvalidAnalysis("need 0 < f0_floor_hz < f0_ceil_hz".into()));
        }
        Ok(())
    }

    /// Hop size in samples (may be fractional for odd rates).
    pub fn hop(&self, sample_rate_hz: u32) -> f64 {
        sample_rate_hz as f64 * self.frame_period_ms / 1000.0
    }

    pub fn frame_count(&self, samples: usize, sample_rate_hz: u32) -> usize {
        (samples as f64 / self.hop(sample_rate_hz)).floor() as usize + 1
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub values_hz: Vec<f64>,
    pub frame_period_ms: f64,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.values_hz.iter().copied().filter(|&f| f > 0.0)
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced().count()
    }

    pub fn voicing_mask(&self) -> Vec<bool> {
        self.values_hz.iter().map(|&f| f > 0.0).collect()
    }
}

/// Frame-level decomposition of a waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub f0: F0Track,
    /// frames × (fft_size/2 + 1), strictly positive.
    pub spectral_envelope: Vec<Vec<f64>>,
    /// frames × (fft_size/2 + 1), within [0, 1].
    pub aperiodicity: Vec<Vec<f64>>,
    pub sample_rate_hz: u32,
    pub fft_size: usize,
}

impl AnalysisResult {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f0.len();
        if self.sample_rate_hz == 0 || !self.fft_size.is_power_of_two() || self.fft_size < 4 {
            return Err(Error::InvalidAnalysis("bad sample rate or fft size".into()));
        }
        if !(self.f0.frame_period_ms > 0.0) {
            return Err(Error::InvalidAnalysis("frame period must be positive".into()));
        }
        if self.spectral_envelope.len() != n || self.aperiodicity.len() != n {
            return Err(Error::InvalidAnalysis(format!(
                "frame counts differ: f0 {}, sp {}, ap {}",
                n,
                self.spectral_envelope.len(),
                self.aperiodicity.len()
            )));
        }
        let bins = self.fft_size / 2 + 1;
        for (i, f) in self.f0.values_hz.iter().enumerate() {
            if !f.is_finite() || *f < 0.0 {
                return Err(Error::InvalidAnalysis(format!("bad F0 {f} at frame {i}")));
            }
        }
        for (i, (sp, ap)) in self.spectral_envelope.iter().zip(&self.aperiodicity).enumerate() {
            if sp.len() != bins || ap.len() != bins {
                return Err(Error::InvalidAnalysis(format!("frame {i} has wrong bin count")));
            }
            if sp.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidAnalysis(format!("non-positive envelope at frame {i}")));
            }
            if ap.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidAnalysis(format!("aperiodicity out of range at frame {i}")));
            }
        }
        Ok(())
    }

    /// Flat binary dump: u64 frames, u64 bins, u32 sample rate, f64 frame
    /// period, then F0, SP and AP as little-endian f64, row-major.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let bins = self.fft_size / 2 + 1;
        w.write_all(&(self.frames() as u64).to_le_bytes())?;
        w.write_all(&(bins as u64).to_le_bytes())?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&self.f0.frame_period_ms.to_le_bytes())?;
        for v in &self.f0.values_hz {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in [&self.spectral_envelope, &self.aperiodicity] {
            for row in m {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let frames = read_u64(&mut r)? as usize;
        let bins = read_u64(&mut r)? as usize;
        let sample_rate_hz = read_u32(&mut r)?;
        let frame_period_ms = read_f64(&mut r)?;
        if bins < 3 || !(bins - 1).is_power_of_two() || frames > (1 << 28) {
            return Err(Error::CorruptFile(format!("implausible analysis header ({frames} x {bins})")));
        }
        let values_hz = (0..frames).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut read_matrix = || -> Result<Vec<Vec<f64>>> {
            (0..frames)
                .map(|_| (0..bins).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>())
                .collect()
        };
        let spectral_envelope = read_matrix()?;
        let aperiodicity = read_matrix()?;
        let a = AnalysisResult {
            f0: F0Track { values_hz, frame_period_ms },
            spectral_envelope,
            aperiodicity,
            sample_rate_hz,
            fft_size: (bins - 1) * 2,
        };
        a.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
        Ok(a)
    }
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Sample `i` of `x`, zero outside the signal.
#[inline]
fn at(x: &[f64], i: i64) -> f64 {
    if i >= 0 && (i as usize) < x.len() {
        x[i as usize]
    } else {
        0.0
    }
}

/// Windowed segment of `x` of length `win.len()` centered on `center`.
fn windowed(x: &[f64], center: f64, win: &[f64]) -> Vec<f64> {
    let start = center.round() as i64 - (win.len() / 2) as i64;
    win.iter().enumerate().map(|(j, w)| w * at(x, start + j as i64)).collect()
}

// ---------------------------------------------------------------------------
// F0

const NCCF_WINDOW_SECS: f64 = 0.025;
const CANDIDATE_MIN_NCCF: f64 = 0.3;
const MAX_CANDIDATES: usize = 5;
const LAG_WEIGHT: f64 = 0.3;
const VOICING_BIAS: f64 = 0.05;
const PITCH_JUMP_COST: f64 = 1.0;
const VOICING_SWITCH_COST: f64 = 0.3;
const F0_LOWPASS_HZ: f64 = 1200.0;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    lag: f64,
    nccf: f64,
    score: f64,
}

/// Normalized cross-correlation over lags `lag_lo..=lag_hi` for a segment
/// starting at `start` of length `win`.
fn nccf(x: &[f64], start: i64, win: usize, lag_lo: usize, lag_hi: usize) -> Option<Vec<f64>> {
    let e0: f64 = (0..win).map(|n| at(x, start + n as i64).powi(2)).sum();
    if e0 < 1e-20 {
        return None;
    }
    let mut out = vec![0.0; lag_hi + 1];
    let mut e_lag: f64 = (0..win).map(|n| at(x, start + lag_lo as i64 + n as i64).powi(2)).sum();
    for lag in lag_lo..=lag_hi {
        if lag > lag_lo {
            let drop = at(x, start + lag as i64 - 1);
            let add = at(x, start + lag as i64 + win as i64 - 1);
            e_lag += add * add - drop * drop;
        }
        let base = start + lag as i64;
        let mut r = 0.0;
        if start >= 0 && (base + win as i64) as usize <= x.len() {
            let s = start as usize;
            let b = base as usize;
            for n in 0..win {
                r += x[s + n] * x[b + n];
            }
        } else {
            for n in 0..win as i64 {
                r += at(x, start + n) * at(x, base + n);
            }
        }
        let denom = (e0 * e_lag.max(0.0)).sqrt();
        out[lag] = if denom > 1e-20 { r / denom } else { 0.0 };
    }
    Some(out)
}

fn frame_candidates(phi: &[f64], lag_lo: usize, lag_hi: usize, lag_max: f64, out: &mut Vec<Candidate>) {
    let mut local = Vec::new();
    for lag in lag_lo + 1..lag_hi {
        let (a, b, c) = (phi[lag - 1], phi[lag], phi[lag + 1]);
        if b >= CANDIDATE_MIN_NCCF && b >= a && b > c {
            let denom = a - 2.0 * b + c;
            let delta = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            let peak = (b - 0.25 * (a - c) * delta).min(1.0);
            let refined = lag as f64 + delta;
            local.push(Candidate { lag: refined, nccf: peak, score: peak * (1.0 - LAG_WEIGHT * refined / lag_max) });
        }
    }
    local.sort_by(|p, q| q.score.total_cmp(&p.score));
    local.truncate(MAX_CANDIDATES);
    out.extend(local);
}

pub fn estimate_f0(w: &Waveform, cfg: &VocoderConfig) -> Result<F0Track> {
    cfg.validate()?;
    let fs = w.sample_rate_hz as f64;
    let hop = cfg.hop(w.sample_rate_hz);
    let x = &w.samples;
    let needed = (2.0 * hop).ceil() as usize;
    if x.len() < needed {
        return Err(Error::TooShort { samples: x.len(), needed });
    }
    let frames = cfg.frame_count(x.len(), w.sample_rate_hz);
    let lag_lo = ((fs / cfg.f0_ceil_hz).floor() as usize).max(2);
    let lag_hi = (fs / cfg.f0_floor_hz).ceil() as usize;
    let win = (NCCF_WINDOW_SECS * fs).round() as usize;
    let lp_taps = dsp::lowpass_fir(F0_LOWPASS_HZ / fs, (fs / 200.0).round() as usize, 60.0);
    let low = dsp::filter_centered(x, &lp_taps);

    let mut cands: Vec<Vec<Candidate>> = Vec::with_capacity(frames);
    let mut best_nccf = Vec::with_capacity(frames);
    for i in 0..frames {
        let center = (i as f64 * hop).round() as i64;
        let start = center - ((win + lag_hi) / 2) as i64;
        let mut list = Vec::new();
        for sig in [x.as_slice(), low.as_slice()] {
            if let Some(phi) = nccf(sig, start, win, lag_lo - 1, lag_hi + 1) {
                frame_candidates(&phi, lag_lo, lag_hi + 1, lag_hi as f64, &mut list);
            }
        }
        list.retain(|c| {
            let f = fs / c.lag;
            f >= cfg.f0_floor_hz * 0.97 && f <= cfg.f0_ceil_hz * 1.03
        });
        best_nccf.push(list.iter().map(|c| c.nccf).fold(0.0, f64::max));
        cands.push(list);
    }

    // Viterbi over {unvoiced} ∪ candidates; state 0 is unvoiced.
    let local = |i: usize, s: usize| -> f64 {
        if s == 0 {
            VOICING_BIAS + best_nccf[i]
        } else {
            1.0 - cands[i][s - 1].score
        }
    };
    let trans = |i: usize, p: usize, s: usize| -> f64 {
        match (p, s) {
            (0, 0) => 0.0,
            (0, _) | (_, 0) => VOICING_SWITCH_COST,
            (p, s) => PITCH_JUMP_COST * (cands[i - 1][p - 1].lag / cands[i][s - 1].lag).ln().abs(),
        }
    };
    let mut cost: Vec<f64> = (0..=cands[0].len()).map(|s| local(0, s)).collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; cost.len()]];
    for i in 1..frames {
        let n = cands[i].len() + 1;
        let mut next = vec![f64::INFINITY; n];
        let mut arg = vec![0usize; n];
        for s in 0..n {
            let l = local(i, s);
            for (p, &c) in cost.iter().enumerate() {
                let v = c + trans(i, p, s) + l;
                if v < next[s] {
                    next[s] = v;
                    arg[s] = p;
                }
            }
        }
        cost = next;
        back.push(arg);
    }
    let mut state = cost.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(s, _)| s).unwrap_or(0);
    let mut values = vec![0.0; frames];
    for i in (0..frames).rev() {
        if state > 0 {
            let f = fs / cands[i][state - 1].lag;
            values[i] = f.clamp(cfg.f0_floor_hz, cfg.f0_ceil_hz);
        }
        state = back[i][state];
    }
    Ok(F0Track { values_hz: values, frame_period_ms: cfg.frame_period_ms })
}

// ---------------------------------------------------------------------------
// Spectral envelope

/// F0 assumed for window sizing on unvoiced frames.
const UNVOICED_WINDOW_F0: f64 = 500.0;
/// Compensation lifter coefficient restoring formant sharpness after smoothing.
const LIFTER_Q1: f64 = -0.15;

fn check_frames(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<usize> {
    let expected = cfg.frame_count(w.len(), w.sample_rate_hz);
    if f0.len() != expected {
        return Err(Error::FrameMismatch { expected, got: f0.len() });
    }
    Ok(expected)
}

/// Rectangular smoothing of width `width_bins` (fractional), mirrored at
/// both ends of the half spectrum.
fn smooth_rect(p: &[f64], width_bins: f64) -> Vec<f64> {
    let n = p.len();
    let half = width_bins / 2.0;
    let pad = half.ceil() as usize + 2;
    // mirrored extension
    let ext: Vec<f64> = (0..n + 2 * pad)
        .map(|i| {
            let k = i as i64 - pad as i64;
            let k = if k < 0 {
                -k
            } else if k >= n as i64 {
                2 * (n as i64 - 1) - k
            } else {
                k
            };
            p[k.clamp(0, n as i64 - 1) as usize]
        })
        .collect();
    // cumulative integral of the piecewise-constant spectrum (bin j spans [j-0.5, j+0.5))
    let mut cum = vec![0.0; ext.len() + 1];
    for (i, v) in ext.iter().enumerate() {
        cum[i + 1] = cum[i] + v;
    }
    let integral = |pos: f64| -> f64 {
        // integral from -0.5 (in ext coords) to pos
        let u = (pos + 0.5).clamp(0.0, ext.len() as f64);
        let j = (u.floor() as usize).min(ext.len() - 1);
        cum[j] + (u - j as f64) * ext[j]
    };
    (0..n)
        .map(|k| {
            let c = (k + pad) as f64;
            (integral(c + half) - integral(c - half)) / width_bins
        })
        .collect()
}

fn envelope_frame(x: &[f64], center: f64, f0: f64, fs: f64, fft: &FftPair) -> Vec<f64> {
    let n = fft.len();
    let f0 = f0.max(3.0 * fs / n as f64);
    let len = ((3.0 * fs / f0).round() as usize).min(n);
    let win = dsp::hann(len);
    let norm: f64 = win.iter().map(|v| v * v).sum();
    let seg = windowed(x, center, &win);
    let power: Vec<f64> = fft.power_half(&seg).into_iter().map(|v| v / norm).collect();
    let width = f0 * n as f64 / fs;
    let smooth = smooth_rect(&power, width);
    let energy: f64 = smooth.iter().sum();
    if !(energy > ENVELOPE_FLOOR) {
        return vec![ENVELOPE_FLOOR; smooth.len()];
    }
    let floor = energy * 1e-12 / smooth.len() as f64;
    let log: Vec<f64> = smooth.iter().map(|v| v.max(floor).max(ENVELOPE_FLOOR).ln()).collect();
    let mut cep = fft.real_cepstrum(&log);
    let q0 = f0 / fs;
    for (q, c) in cep.iter_mut().enumerate().skip(1) {
        let qq = q.min(n - q) as f64;
        let arg = std::f64::consts::PI * q0 * qq;
        let smoothing = arg.sin() / arg;
        let compensation = (1.0 - 2.0 * LIFTER_Q1) + 2.0 * LIFTER_Q1 * (2.0 * arg).cos();
        *c *= smoothing * compensation;
    }
    fft.cepstrum_to_half(&cep).into_iter().map(|v| v.exp().max(ENVELOPE_FLOOR)).collect()
}

pub fn estimate_spectral_envelope(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let frames = check_frames(w, f0, cfg)?;
    let fs = w.sample_rate_hz as f64;
    let hop = cfg.hop(w.sample_rate_hz);
    let fft = FftPair::new(cfg.fft_size);
    Ok((0..frames)
        .map(|i| {
            let f = if f0.values_hz[i] > 0.0 { f0.values_hz[i] } else { UNVOICED_WINDOW_F0 };
            envelope_frame(&w.samples, i as f64 * hop, f, fs, &fft)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Aperiodicity

const AP_BAND_HZ: f64 = 1000.0;
/// Window length in periods; 6 puts the Hann main-lobe edge at F0/3.
const AP_WINDOW_PERIODS: f64 = 6.0;
/// Relative regularizer so empty bands read as periodic rather than 0/0.
const AP_REGULARIZER: f64 = 1e-4;

fn aperiodicity_frame(x: &[f64], center: f64, f0: f64, fs: f64, bins: usize, fft: &FftPair) -> Vec<f64> {
    let n = fft.len();
    let len = ((AP_WINDOW_PERIODS * fs / f0).round() as usize).min(n);
    let win = dsp::hann(len);
    let seg = windowed(x, center, &win);
    let power = fft.power_half(&seg);
    let mean_all = power.iter().sum::<f64>() / power.len() as f64;
    let delta = AP_REGULARIZER * mean_all + 1e-300;
    let nyq = fs / 2.0;
    let n_bands = (nyq / AP_BAND_HZ).ceil() as usize;
    let lobe = f0 / 3.0;
    let mut band_ap = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let lo = b as f64 * AP_BAND_HZ;
        let hi = ((b + 1) as f64 * AP_BAND_HZ).min(nyq);
        let (mut all, mut n_all, mut res, mut n_res) = (0.0, 0usize, 0.0, 0usize);
        for (k, &p) in power.iter().enumerate() {
            let f = k as f64 * fs / n as f64;
            if f < lo || f >= hi && !(b + 1 == n_bands && f <= hi) {
                continue;
            }
            all += p;
            n_all += 1;
            let h = (f / f0).round();
            if (f - h * f0).abs() > lobe {
                res += p;
                n_res += 1;
            }
        }
        let ap = if n_res == 0 || n_all == 0 {
            1.0
        } else {
            ((res / n_res as f64) / (all / n_all as f64 + delta)).clamp(0.0, 1.0)
        };
        band_ap.push(ap);
    }
    // piecewise-linear interpolation between band centers
    let centers: Vec<f64> = (0..n_bands).map(|b| (b as f64 + 0.5) * AP_BAND_HZ).collect();
    let out_fft = (bins - 1) * 2;
    (0..bins)
        .map(|k| {
            let f = k as f64 * fs / out_fft as f64;
            if f <= centers[0] {
                band_ap[0]
            } else if f >= centers[n_bands - 1] {
                band_ap[n_bands - 1]
            } else {
                let pos = f / AP_BAND_HZ - 0.5;
                let j = pos.floor() as usize;
                let a = pos - j as f64;
                band_ap[j] * (1.0 - a) + band_ap[j + 1] * a
            }
        })
        .collect()
}

pub fn estimate_aperiodicity(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let frames = check_frames(w, f0, cfg)?;
    let fs = w.sample_rate_hz as f64;
    let hop = cfg.hop(w.sample_rate_hz);
    let bins = cfg.bins();
    let longest = (AP_WINDOW_PERIODS * fs / cfg.f0_floor_hz).ceil() as usize;
    let fft = FftPair::new(dsp::next_pow2(longest.max(cfg.fft_size)));
    Ok((0..frames)
        .map(|i| {
            let f = f0.values_hz[i];
            if f > 0.0 {
                aperiodicity_frame(&w.samples, i as f64 * hop, f, fs, bins, &fft)
            } else {
                vec![1.0; bins]
            }
        })
        .collect())
}

pub fn analyze(w: &Waveform, cfg: &VocoderConfig) -> Result<AnalysisResult> {
    let f0 = estimate_f0(w, cfg)?;
    let spectral_envelope = estimate_spectral_envelope(w, &f0, cfg)?;
    let aperiodicity = estimate_aperiodicity(w, &f0, cfg)?;
    Ok(AnalysisResult { f0, spectral_envelope, aperiodicity, sample_rate_hz: w.sample_rate_hz, fft_size: cfg.fft_size })
}

// ---------------------------------------------------------------------------
// Synthesis

const SYNTH_NOISE_SEED: u64 = 0x5eed_0f_5a17;

fn interp_row(m: &[Vec<f64>], pos: f64) -> Vec<f64> {
    let last = m.len() - 1;
    let i0 = (pos.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    let a = (pos - i0 as f64).clamp(0.0, 1.0);
    m[i0].iter().zip(&m[i1]).map(|(p, q)| p + a * (q - p)).collect()
}

fn interp_f0(f0: &[f64], pos: f64) -> f64 {
    let last = f0.len() - 1;
    let i0 = (pos.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    let (a, b) = (f0[i0], f0[i1]);
    if a > 0.0 && b > 0.0 {
        let t = (pos - i0 as f64).clamp(0.0, 1.0);
        a + t * (b - a)
    } else {
        let nearest = (pos.round() as usize).min(last);
        f0[nearest]
    }
}

pub fn synthesize(a: &AnalysisResult) -> Result<Waveform> {
    a.validate()?;
    if a.frames() == 0 {
        return Err(Error::InvalidAnalysis("no frames".into()));
    }
    let fs = a.sample_rate_hz as f64;
    let hop = fs * a.f0.frame_period_ms / 1000.0;
    let n_out = (a.frames() as f64 * hop).round() as usize;
    let n = a.fft_size;
    let fft = FftPair::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(SYNTH_NOISE_SEED);
    let half = n / 2;
    let mut out = vec![0.0; n_out + n + half];
    let mut t = 0.0f64;
    while (t as usize) < n_out {
        let pos = t / hop;
        let f0 = interp_f0(&a.f0.values_hz, pos);
        let interval = if f0 > 0.0 { fs / f0 } else { hop };
        let sp = interp_row(&a.spectral_envelope, pos);
        let ap = interp_row(&a.aperiodicity, pos);
        let start = t.floor();
        let frac = t - start;
        let seg_len = ((t + interval).floor() - start).max(1.0) as usize;

        let noise: Vec<f64> = (0..seg_len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut noise_spec = fft.forward_real(&noise);
        let noise_amp: Vec<f64> = sp.iter().zip(&ap).map(|(s, p)| 0.5 * (s * p).max(1e-300).ln()).collect();
        let noise_filter = fft.minimum_phase(&noise_amp);
        for (y, h) in noise_spec.iter_mut().zip(&noise_filter) {
            *y *= h;
        }
        fft.inverse(&mut noise_spec);
        let s = start as usize + half;
        for (o, v) in out[s..s + n].iter_mut().zip(&noise_spec) {
            *o += v.re;
        }

        if f0 > 0.0 {
            let pulse_amp: Vec<f64> =
                sp.iter().zip(&ap).map(|(s, p)| 0.5 * (s * (1.0 - p) * interval).max(1e-300).ln()).collect();
            let mut pulse = fft.minimum_phase(&pulse_amp);
            for (k, h) in pulse.iter_mut().enumerate() {
                // fractional delay; bins above n/2 are negative frequencies
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let phase = -2.0 * std::f64::consts::PI * kk * frac / n as f64;
                *h *= C64::from_polar(1.0, phase);
            }
            fft.inverse(&mut pulse);
            // The delayed response rings slightly before its onset; the upper
            // half of the buffer holds negative time offsets.
            let s = start as usize;
            for (j, v) in pulse.iter().enumerate() {
                let idx = if j < half { s + half + j } else { s + j - half };
                out[idx] += v.re;
            }
        }
        t += interval;
    }
    let samples = out[half..half + n_out].to_vec();
    Ok(Waveform { samples, sample_rate_hz: a.sample_rate_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{self, Resonance};
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64) -> Waveform {
        let n = (16000.0 * secs) as usize;
        Waveform {
            samples: (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
            sample_rate_hz: 16000,
        }
    }

    fn noise(secs: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (16000.0 * secs) as usize;
        Waveform {
            samples: (0..n).map(|_| 0.2 * { let v: f64 = StandardNormal.sample(&mut rng); v }).collect(),
            sample_rate_hz: 16000,
        }
    }

    #[test]
    fn config_validation() {
        assert!(VocoderConfig::default().validate().is_ok());
        let bad = VocoderConfig { fft_size: 1000, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = VocoderConfig { f0_floor_hz: 900.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn too_short_signal_rejected() {
        let w = Waveform { samples: vec![0.0; 100], sample_rate_hz: 16000 };
        assert!(matches!(estimate_f0(&w, &VocoderConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn sine_220_is_voiced_at_220() {
        let w = sine(220.0, 1.0);
        let f0 = estimate_f0(&w, &VocoderConfig::default()).unwrap();
        let interior = &f0.values_hz[10..f0.len() - 10];
        let good = interior.iter().filter(|&&f| (f - 220.0).abs() / 220.0 <= 0.02).count();
        assert!(good as f64 >= 0.9 * interior.len() as f64, "{good}/{}", interior.len());
    }

    #[test]
    fn silence_is_unvoiced_everywhere() {
        let w = Waveform { samples: vec![0.0; 16000], sample_rate_hz: 16000 };
        let a = analyze(&w, &VocoderConfig::default()).unwrap();
        assert!(a.f0.values_hz.iter().all(|&f| f == 0.0));
        assert!(a.spectral_envelope.iter().flatten().all(|&v| v == ENVELOPE_FLOOR));
        assert!(a.aperiodicity.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let w = noise(1.0, 3);
        let f0 = estimate_f0(&w, &VocoderConfig::default()).unwrap();
        let unvoiced = f0.values_hz.iter().filter(|&&f| f == 0.0).count();
        assert!(unvoiced as f64 >= 0.8 * f0.len() as f64, "{unvoiced}/{}", f0.len());
    }

    #[test]
    fn frame_count_is_consistent() {
        let w = sine(150.0, 1.0);
        let a = analyze(&w, &VocoderConfig::default()).unwrap();
        assert_eq!(a.frames(), 201);
        assert_eq!(a.spectral_envelope.len(), 201);
        assert_eq!(a.aperiodicity.len(), 201);
        a.validate().unwrap();
    }

    #[test]
    fn mismatched_f0_track_rejected() {
        let w = sine(150.0, 0.5);
        let f0 = F0Track { values_hz: vec![0.0; 3], frame_period_ms: 5.0 };
        assert!(matches!(
            estimate_spectral_envelope(&w, &f0, &VocoderConfig::default()),
            Err(Error::FrameMismatch { .. })
        ));
        assert!(matches!(
            estimate_aperiodicity(&w, &f0, &VocoderConfig::default()),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn aperiodicity_low_for_sine_high_for_noise() {
        let cfg = VocoderConfig::default();
        let w = sine(220.0, 1.0);
        let a = analyze(&w, &cfg).unwrap();
        let voiced: Vec<f64> = a
            .aperiodicity
            .iter()
            .zip(&a.f0.values_hz)
            .filter(|(_, &f)| f > 0.0)
            .flat_map(|(r, _)| r.iter().copied())
            .collect();
        let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
        assert!(mean <= 0.3, "sine mean AP {mean}");

        let w = noise(1.0, 5);
        let a = analyze(&w, &cfg).unwrap();
        let all: Vec<f64> = a.aperiodicity.iter().flatten().copied().collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean >= 0.7, "noise mean AP {mean}");
    }

    #[test]
    fn unvoiced_frames_have_unit_aperiodicity() {
        let w = sine(200.0, 0.3);
        let mut f0 = estimate_f0(&w, &VocoderConfig::default()).unwrap();
        f0.values_hz[5] = 0.0;
        let ap = estimate_aperiodicity(&w, &f0, &VocoderConfig::default()).unwrap();
        assert!(ap[5].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn envelope_peak_at_resonance() {
        let w = toy::vowel(150.0, &[Resonance::new(1000.0, 250.0)], 0.5, 16000);
        let cfg = VocoderConfig::default();
        let a = analyze(&w, &cfg).unwrap();
        let bin_hz = 16000.0 / cfg.fft_size as f64;
        for i in 20..a.frames() - 20 {
            let row = &a.spectral_envelope[i];
            // skip the DC region where the resonator gain is 1
            let peak = (10..row.len()).max_by(|&p, &q| row[p].total_cmp(&row[q])).unwrap();
            assert!((peak as f64 - 1000.0 / bin_hz).abs() <= 2.0, "frame {i}: peak bin {peak}");
        }
    }

    #[test]
    fn dump_round_trip() {
        let w = sine(180.0, 0.2);
        let a = analyze(&w, &VocoderConfig::default()).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 + 4 + 8 + 8 * a.frames() * (1 + 2 * 513));
        let b = AnalysisResult::read_from(buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthesis_length_and_rate() {
        let w = sine(180.0, 0.5);
        let a = analyze(&w, &VocoderConfig::default()).unwrap();
        let y = synthesize(&a).unwrap();
        assert_eq!(y.sample_rate_hz, 16000);
        assert_eq!(y.len(), a.frames() * 80);
    }

    #[test]
    fn invalid_analysis_rejected() {
        let w = sine(180.0, 0.2);
        let mut a = analyze(&w, &VocoderConfig::default()).unwrap();
        a.aperiodicity[0][0] = 1.5;
        assert!(matches!(synthesize(&a), Err(Error::InvalidAnalysis(_))));
        let mut a = analyze(&w, &VocoderConfig::default()).unwrap();
        a.spectral_envelope.pop();
        assert!(matches!(synthesize(&a), Err(Error::InvalidAnalysis(_))));
    }
}
