//! Shared DSP primitives: FFT wrapper, windows, minimum-phase construction.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex<f64>;

/// Forward/inverse complex FFT pair of a fixed size.
///
/// The inverse is normalized (divides by `n`), so `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct FftPair {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("n", &self.n).finish()
    }
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// FFT of a real sequence, zero-padded (or truncated) to `n`.
    pub fn forward_real(&self, x: &[f64]) -> Vec<C64> {
        let mut buf: Vec<C64> = x.iter().take(self.n).map(|&v| C64::new(v, 0.0)).collect();
        buf.resize(self.n, C64::new(0.0, 0.0));
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    /// Normalized inverse FFT in place.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Power spectrum `|X_k|^2` for bins `0..=n/2`.
    pub fn power_half(&self, x: &[f64]) -> Vec<f64> {
        let spec = self.forward_real(x);
        spec[..=self.n / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Real cepstrum of a half spectrum of real values (bins `0..=n/2`),
    /// treating it as the even extension over the full circle.
    pub fn real_cepstrum(&self, half: &[f64]) -> Vec<f64> {
        let mut buf = even_extend(half, self.n);
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Half spectrum from an even real cepstrum of length `n`.
    pub fn cepstrum_to_half(&self, cep: &[f64]) -> Vec<f64> {
        let mut buf: Vec<C64> = cep.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf[..=self.n / 2].iter().map(|c| c.re).collect()
    }

    /// Full complex minimum-phase spectrum whose log-magnitude on bins
    /// `0..=n/2` is `log_amp`.
    pub fn minimum_phase(&self, log_amp: &[f64]) -> Vec<C64> {
        let n = self.n;
        let cep = self.real_cepstrum(log_amp);
        let mut folded = vec![C64::new(0.0, 0.0); n];
        folded[0] = C64::new(cep[0], 0.0);
        for i in 1..n / 2 {
            folded[i] = C64::new(2.0 * cep[i], 0.0);
        }
        folded[n / 2] = C64::new(cep[n / 2], 0.0);
        self.fwd.process(&mut folded);
        for v in folded.iter_mut() {
            *v = v.exp();
        }
        folded
    }
}

/// Even (conjugate-symmetric, real) extension of a half spectrum to `n` bins.
pub fn even_extend(half: &[f64], n: usize) -> Vec<C64> {
    debug_assert_eq!(half.len(), n / 2 + 1);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (i, &v) in half.iter().enumerate() {
        buf[i] = C64::new(v, 0.0);
    }
    for i in n / 2 + 1..n {
        buf[i] = C64::new(half[n - i], 0.0);
    }
    buf
}

/// Symmetric Hann window with nonzero end points.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * (n as f64 + 0.5) / len as f64).cos())
        .collect()
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Kaiser window evaluated at `x` in [-1, 1]; zero outside.
pub fn kaiser(x: f64, beta: f64) -> f64 {
    if x.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - x * x).sqrt()) / bessel_i0(beta)
}

/// Kaiser `beta` for a stopband attenuation of `atten_db`.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Linear-phase low-pass FIR (Kaiser windowed sinc), unit DC gain.
/// `cutoff` is normalized to the sample rate (0.5 = Nyquist).
pub fn lowpass_fir(cutoff: f64, half_len: usize, atten_db: f64) -> Vec<f64> {
    let beta = kaiser_beta(atten_db);
    let half = half_len as f64;
    let mut taps: Vec<f64> = (0..=2 * half_len)
        .map(|i| {
            let u = i as f64 - half;
            2.0 * cutoff * sinc(2.0 * cutoff * u) * kaiser(u / (half + 1.0), beta)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Zero-phase FIR filtering (output aligned with input, zero-padded edges).
pub fn filter_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = x.len();
    let mut y = vec![0.0; n];
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        for j in lo..=hi {
            acc += x[j] * taps[j + half - i];
        }
        *out = acc;
    }
    y
}

/// Log-spectral distortion in dB between two power spectra.
pub fn log_spectral_distortion(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = 10.0 * (p / q).log10();
            d * d
        })
        .sum();
    (sum / n as f64).sqrt()
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}
