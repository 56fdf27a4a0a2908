//! Synthetic voiced corpora.
//!
//! Signals are additive harmonic series shaped by two-pole resonances, which
//! is the magnitude spectrum of an ideal pulse train run through a formant
//! filter. Speaker identity lives in the formant scale and base F0; the
//! "emotional" style raises F0 and tilts the spectrum upward.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;

/// A two-pole digital resonator, normalized to unit gain at DC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

impl Resonance {
    pub fn new(freq_hz: f64, bandwidth_hz: f64) -> Self {
        Self { freq_hz, bandwidth_hz }
    }

    /// |H(e^{jw})| at frequency `f` for sample rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let r = (-PI * self.bandwidth_hz / fs).exp();
        let theta = 2.0 * PI * self.freq_hz / fs;
        let w = 2.0 * PI * f / fs;
        let a1 = -2.0 * r * theta.cos();
        let a2 = r * r;
        let gain = 1.0 + a1 + a2;
        // 1 + a1 e^{-jw} + a2 e^{-2jw}
        let re = 1.0 + a1 * w.cos() + a2 * (2.0 * w).cos();
        let im = -a1 * w.sin() - a2 * (2.0 * w).sin();
        gain / (re * re + im * im).sqrt()
    }
}

/// Linear gain of a spectral tilt of `db_per_khz` at frequency `f`.
pub fn tilt_gain(f: f64, db_per_khz: f64) -> f64 {
    10f64.powf(db_per_khz * f / 1000.0 / 20.0)
}

/// Piecewise-constant-per-block description of a voiced source.
pub trait VoiceTrajectory {
    fn f0_at(&self, t: f64) -> f64;
    fn formants_at(&self, t: f64) -> Vec<Resonance>;
    fn tilt_db_per_khz(&self) -> f64 {
        0.0
    }
    fn amplitude_at(&self, _t: f64) -> f64 {
        1.0
    }
}

/// Stationary vowel: fixed F0 and formants.
#[derive(Debug, Clone)]
pub struct SteadyVowel {
    pub f0_hz: f64,
    pub formants: Vec<Resonance>,
    pub tilt_db_per_khz: f64,
}

impl VoiceTrajectory for SteadyVowel {
    fn f0_at(&self, _t: f64) -> f64 {
        self.f0_hz
    }
    fn formants_at(&self, _t: f64) -> Vec<Resonance> {
        self.formants.clone()
    }
    fn tilt_db_per_khz(&self) -> f64 {
        self.tilt_db_per_khz
    }
}

const BLOCK: usize = 16;

/// Render a trajectory as a sum of harmonics with phase accumulators.
/// The result is scaled so its peak magnitude equals `peak`.
pub fn render(traj: &dyn VoiceTrajectory, secs: f64, fs: u32, peak: f64) -> Waveform {
    let fsf = fs as f64;
    let n = (secs * fsf).round() as usize;
    let nyq = fsf / 2.0;
    let mut phases: Vec<f64> = Vec::new();
    let mut amps: Vec<f64> = Vec::new();
    let mut out = vec![0.0; n];
    let mut f0 = 0.0;
    for (i, y) in out.iter_mut().enumerate() {
        if i % BLOCK == 0 {
            let t = i as f64 / fsf;
            f0 = traj.f0_at(t);
            let formants = traj.formants_at(t);
            let tilt = traj.tilt_db_per_khz();
            let env = traj.amplitude_at(t);
            let count = ((0.999 * nyq) / f0).floor() as usize;
            phases.resize(count.max(phases.len()), 0.0);
            amps.clear();
            for h in 1..=count {
                let f = h as f64 * f0;
                let mut a: f64 = formants.iter().map(|r| r.magnitude(f, fsf)).product();
                a *= tilt_gain(f, tilt);
                // fade harmonics near the top to avoid clicks when count changes
                let edge = (nyq - f) / (0.02 * nyq);
                a *= edge.clamp(0.0, 1.0);
                amps.push(a * env);
            }
        }
        let mut acc = 0.0;
        for (h, a) in amps.iter().enumerate() {
            acc += a * phases[h].sin();
        }
        for (h, ph) in phases.iter_mut().enumerate() {
            *ph += 2.0 * PI * (h + 1) as f64 * f0 / fsf;
            if *ph > 2.0 * PI {
                *ph -= 2.0 * PI;
            }
        }
        *y = acc;
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        for v in out.iter_mut() {
            *v *= peak / max;
        }
    }
    Waveform { samples: out, sample_rate_hz: fs }
}

/// A vowel-like test signal: constant F0 through the given resonances.
pub fn vowel(f0_hz: f64, formants: &[Resonance], secs: f64, fs: u32) -> Waveform {
    let v = SteadyVowel { f0_hz, formants: formants.to_vec(), tilt_db_per_khz: 0.0 };
    render(&v, secs, fs, 0.5)
}

/// Canonical vowel formant targets (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 4] = [
    [730.0, 1090.0, 2440.0], // a
    [270.0, 2290.0, 3010.0], // i
    [300.0, 870.0, 2240.0],  // u
    [530.0, 1840.0, 2480.0], // e
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 160.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Style {
    Neutral,
    Emotional,
}

/// Style parameters: F0 multiplier and spectral tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleShift {
    pub f0_ratio: f64,
    pub tilt_db_per_khz: f64,
}

impl StyleShift {
    /// F0 raised 40 %, tilt +3 dB/kHz.
    pub const EMOTIONAL: StyleShift = StyleShift { f0_ratio: 1.4, tilt_db_per_khz: 3.0 };
    pub const NEUTRAL: StyleShift = StyleShift { f0_ratio: 1.0, tilt_db_per_khz: 0.0 };

    pub fn of(style: Style) -> Self {
        match style {
            Style::Neutral => Self::NEUTRAL,
            Style::Emotional => Self::EMOTIONAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub id: usize,
    pub formant_scale: f64,
    pub base_f0_hz: f64,
}

impl ToySpeaker {
    /// `count` speakers with formant scales spread over [0.82, 1.18]
    /// and base F0 over [95, 190] Hz.
    pub fn roster(count: usize) -> Vec<ToySpeaker> {
        (0..count)
            .map(|i| {
                let u = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
                ToySpeaker { id: i, formant_scale: 0.82 + 0.36 * u, base_f0_hz: 95.0 + 95.0 * u }
            })
            .collect()
    }
}

/// An utterance as a sequence of vowel targets with a slowly moving F0.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    targets: Vec<Vec<Resonance>>,
    seg_secs: f64,
    glide_secs: f64,
    f0_base: f64,
    f0_depth: f64,
    f0_rate: f64,
    f0_phase: f64,
    f0_decline: f64,
    tilt: f64,
    secs: f64,
}

impl ToyUtterance {
    pub fn new(speaker: &ToySpeaker, shift: StyleShift, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nseg = rng.random_range(3..=4);
        let seg_secs = rng.random_range(0.28..0.36);
        let targets = (0..nseg)
            .map(|_| {
                let v = VOWELS[rng.random_range(0..VOWELS.len())];
                v.iter()
                    .zip(BANDWIDTHS)
                    .map(|(&f, b)| Resonance::new(f * speaker.formant_scale, b))
                    .collect()
            })
            .collect();
        Self {
            targets,
            seg_secs,
            glide_secs: 0.06,
            f0_base: speaker.base_f0_hz * rng.random_range(0.95..1.05) * shift.f0_ratio,
            f0_depth: rng.random_range(0.04..0.10),
            f0_rate: rng.random_range(1.5..3.5),
            f0_phase: rng.random_range(0.0..2.0 * PI),
            f0_decline: rng.random_range(0.05..0.15),
            tilt: shift.tilt_db_per_khz,
            secs: nseg as f64 * seg_secs,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.secs
    }

    pub fn render(&self, fs: u32) -> Waveform {
        render(self, self.secs, fs, 0.6)
    }
}

impl VoiceTrajectory for ToyUtterance {
    fn f0_at(&self, t: f64) -> f64 {
        let decline = 1.0 - self.f0_decline * t / self.secs;
        self.f0_base * decline * (1.0 + self.f0_depth * (2.0 * PI * self.f0_rate * t + self.f0_phase).sin())
    }

    fn formants_at(&self, t: f64) -> Vec<Resonance> {
        let seg = ((t / self.seg_secs) as usize).min(self.targets.len() - 1);
        let into = t - seg as f64 * self.seg_secs;
        let cur = &self.targets[seg];
        if seg + 1 < self.targets.len() && into > self.seg_secs - self.glide_secs {
            let next = &self.targets[seg + 1];
            let a = (into - (self.seg_secs - self.glide_secs)) / self.glide_secs;
            cur.iter()
                .zip(next)
                .map(|(p, q)| {
                    Resonance::new(
                        p.freq_hz + a * (q.freq_hz - p.freq_hz),
                        p.bandwidth_hz + a * (q.bandwidth_hz - p.bandwidth_hz),
                    )
                })
                .collect()
        } else {
            cur.clone()
        }
    }

    fn tilt_db_per_khz(&self) -> f64 {
        self.tilt
    }

    fn amplitude_at(&self, t: f64) -> f64 {
        let ramp = 0.03;
        let a = (t / ramp).min(1.0) * ((self.secs - t) / ramp).clamp(0.0, 1.0);
        0.05 + 0.95 * a
    }
}

/// One generated utterance with its labels.
#[derive(Debug, Clone)]
pub struct ToyItem {
    pub speaker: usize,
    pub style: Style,
    pub wave: Waveform,
}

/// `per_style` utterances of each style spread round-robin over `speakers`.
pub fn toy_corpus(speakers: &[ToySpeaker], per_style: usize, fs: u32, seed: u64) -> Vec<ToyItem> {
    let mut items = Vec::with_capacity(2 * per_style);
    for (si, style) in [Style::Emotional, Style::Neutral].into_iter().enumerate() {
        for i in 0..per_style {
            let spk = &speakers[i % speakers.len()];
            let utt_seed = seed.wrapping_mul(1_000_003).wrapping_add((si * 100_000 + i) as u64);
            let u = ToyUtterance::new(spk, StyleShift::of(style), utt_seed);
            items.push(ToyItem { speaker: spk.id, style, wave: u.render(fs) });
        }
    }
    items
}
