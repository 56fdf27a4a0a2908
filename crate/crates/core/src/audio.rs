//! PCM16 mono WAV I/O and sample-rate conversion.

use std::path::Path;

use crate::dsp;
use crate::{Error, Result};

/// Mono audio with its sample rate. Samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    decode(hound::WavReader::open(path.as_ref()).map_err(map_hound)?)
}

/// [`read_wav`] on an in-memory file.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<Waveform> {
    decode(hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(map_hound)?)
}

fn decode<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "expected PCM 16-bit, found {:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Quantize one amplitude to PCM16, hard-clipping to [-1, 1] first.
pub fn quantize(v: f64) -> i16 {
    let clipped = v.clamp(-1.0, 1.0);
    (clipped * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn encode<W: std::io::Write + std::io::Seek>(out: W, w: &Waveform) -> Result<()> {
    if w.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::new(out, spec).map_err(map_hound)?;
    for &v in &w.samples {
        writer.write_sample(quantize(v)).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    if w.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    encode(f, w)
}

/// In-memory PCM16 WAV file.
pub fn wav_bytes(w: &Waveform) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    encode(&mut buf, w)?;
    Ok(buf.into_inner())
}

/// Stopband attenuation of the resampling filter.
const RESAMPLE_ATTEN_DB: f64 = 70.0;
/// Transition band as a fraction of the lower of the two sample rates.
const RESAMPLE_TRANSITION: f64 = 0.1;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase Kaiser-windowed-sinc resampler for a fixed rational ratio.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: u64,
    down: u64,
    half: usize,
    /// `phases[p][j]` weights input sample `k0 - half + j` for output phase `p`.
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        let g = gcd(from_hz as u64, to_hz as u64);
        let up = to_hz as u64 / g;
        let down = from_hz as u64 / g;
        // Filter designed against the lower rate, expressed in input-sample units.
        let ratio = (to_hz.min(from_hz) as f64) / from_hz as f64;
        let cutoff = ratio * (1.0 - RESAMPLE_TRANSITION);
        let transition_rad = 2.0 * std::f64::consts::PI * RESAMPLE_TRANSITION * ratio;
        let taps = (RESAMPLE_ATTEN_DB - 8.0) / (2.285 * transition_rad);
        let half = (taps / 2.0).ceil() as usize + 1;
        let beta = dsp::kaiser_beta(RESAMPLE_ATTEN_DB);
        let span = half as f64;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut row: Vec<f64> = (0..=2 * half)
                    .map(|j| {
                        let u = frac + half as f64 - j as f64;
                        cutoff * dsp::sinc(cutoff * u) * dsp::kaiser(u / span, beta)
                    })
                    .collect();
                let s: f64 = row.iter().sum();
                for c in row.iter_mut() {
                    *c /= s;
                }
                row
            })
            .collect();
        Self { up, down, half, phases }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u64 * self.up).div_ceil(self.down)) as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(x.len());
        let n_in = x.len() as i64;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let k0 = (pos / self.up) as i64;
            let phase = &self.phases[(pos % self.up) as usize];
            let start = k0 - self.half as i64;
            let mut acc = 0.0;
            for (j, &c) in phase.iter().enumerate() {
                let k = start + j as i64;
                if k >= 0 && k < n_in {
                    acc += c * x[k as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

/// Resample to `target_hz`. Identity (an exact copy) when the rates match.
pub fn resample(w: &Waveform, target_hz: u32) -> Waveform {
    assert!(target_hz > 0, "target rate must be positive");
    if w.sample_rate_hz == target_hz {
        return w.clone();
    }
    let rs = Resampler::new(w.sample_rate_hz, target_hz);
    Waveform { samples: rs.process(&w.samples), sample_rate_hz: target_hz }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: u32, secs: f64, amp: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect();
        Waveform { samples, sample_rate_hz: rate }
    }

    // Naive DFT magnitude-squared, used as an oracle independent of rustfft.
    fn dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn read_missing_file_is_io_error() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(Error::Io(_))));
    }

    #[test]
    fn mono_pcm16_header_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform { samples: vec![0.25; 16000], sample_rate_hz: 16000 };
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate_hz, 16000);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..20 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedChannels(2))));
    }

    #[test]
    fn float_wav_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(0.5f32).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));
    }

    #[test]
    fn most_negative_sample_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(-32768i16).unwrap();
        wr.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![-1.0]);
    }

    #[test]
    fn tone_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let w = tone(440.0, 16000, 0.5, 0.8);
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        let max = w.samples.iter().zip(&r.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max <= 1.0 / 32768.0, "max diff {max}");
    }

    #[test]
    fn out_of_range_is_clipped() {
        assert_eq!(quantize(1.5), 32767);
        assert_eq!(quantize(-3.0), -32768);
        assert_eq!(quantize(1.0), 32767);
    }

    #[test]
    fn empty_write_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform { samples: vec![], sample_rate_hz: 16000 };
        assert!(matches!(write_wav(dir.path().join("e.wav"), &w), Err(Error::EmptySignal)));
    }

    #[test]
    fn equal_rates_are_identity() {
        let w = tone(300.0, 16000, 0.1, 0.5);
        assert_eq!(resample(&w, 16000), w);
    }

    #[test]
    fn one_second_48k_gives_16000_samples() {
        let w = tone(440.0, 48000, 1.0, 0.5);
        let r = resample(&w, 16000);
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate_hz, 16000);
    }

    #[test]
    fn tone_440_keeps_dominant_bin() {
        let w = tone(440.0, 48000, 0.2, 0.5);
        let r = resample(&w, 16000);
        let p = dft_power(&r.samples);
        let peak = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let bin_hz = 16000.0 / r.len() as f64;
        let expected = (440.0 / bin_hz).round() as i64;
        assert!((peak as i64 - expected).abs() <= 1, "peak bin {peak}, expected {expected}");
    }

    #[test]
    fn passband_tone_retains_energy() {
        // 6 kHz is inside the 16 kHz passband (edge at 7.2 kHz nominal).
        let w = tone(6000.0, 48000, 0.2, 0.5);
        let r = resample(&w, 16000);
        // trim filter edge transients
        let inner = &r.samples[200..r.len() - 200];
        let p = dft_power(inner);
        let total: f64 = p.iter().sum();
        let bin_hz = 16000.0 / inner.len() as f64;
        let k = (6000.0 / bin_hz).round() as usize;
        let near: f64 = p[k - 2..=k + 2].iter().sum();
        assert!(near / total >= 0.99, "fraction {}", near / total);
        let in_power: f64 = w.samples.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let out_power: f64 = inner.iter().map(|v| v * v).sum::<f64>() / inner.len() as f64;
        assert!(out_power / in_power > 0.99, "power ratio {}", out_power / in_power);
    }

    #[test]
    fn tone_above_target_nyquist_is_attenuated_60db() {
        let w = tone(10000.0, 48000, 0.2, 0.5);
        let r = resample(&w, 16000);
        let inner = &r.samples[200..r.len() - 200];
        let in_power: f64 = w.samples.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let out_power: f64 = inner.iter().map(|v| v * v).sum::<f64>() / inner.len() as f64;
        let atten = 10.0 * (in_power / out_power).log10();
        assert!(atten >= 60.0, "attenuation {atten} dB");
    }

    #[test]
    fn upsampling_preserves_duration() {
        let w = tone(200.0, 16000, 0.3, 0.5);
        let r = resample(&w, 44100);
        let d = (r.duration_secs() - w.duration_secs()).abs();
        assert!(d <= 1.0 / 44100.0 + 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]

            #[test]
            fn pure_tone_keeps_dominant_frequency(freq in 100.0f64..6500.0) {
                let w = tone(freq, 48000, 0.1, 0.5);
                let r = resample(&w, 16000);
                let p = dft_power(&r.samples);
                let peak = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                let bin_hz = 16000.0 / r.len() as f64;
                prop_assert!((peak as f64 - freq / bin_hz).abs() <= 1.0);
            }

            #[test]
            fn resampling_is_idempotent_at_fixed_rate(n in 50usize..400, seed in 0u64..1000) {
                let samples: Vec<f64> = (0..n).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0).collect();
                let w = Waveform { samples, sample_rate_hz: 22050 };
                let once = resample(&w, 16000);
                let twice = resample(&once, 16000);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn write_read_round_trip(samples in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("p.wav");
                let w = Waveform { samples, sample_rate_hz: 16000 };
                write_wav(&p, &w).unwrap();
                let r = read_wav(&p).unwrap();
                for (a, b) in w.samples.iter().zip(&r.samples) {
                    prop_assert!((a - b).abs() <= 1.0 / 32768.0);
                }
            }
        }
    }
}
