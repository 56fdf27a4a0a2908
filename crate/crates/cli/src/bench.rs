//! Per-stage latency and memory of the edge path, with and without the
//! filter, plus optional energy attribution from an external power meter.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use sanitone_core::audio::{read_wav, wav_bytes, Waveform};
use sanitone_core::cyclegan::FrozenFilter;
use sanitone_core::pipeline::{convert, generate, preprocess};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Load and upload the raw recording.
    Baseline,
    /// Load, pre-process, convert, generate, upload.
    Filtered,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "filtered" => Ok(Mode::Filtered),
            _ => Err(format!("unknown mode {s:?} (baseline or filtered)")),
        }
    }
}

/// Where the "upload" stage sends its bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Sink {
    Dir(PathBuf),
    /// HTTP POST of the WAV body.
    Http(String),
}

impl Sink {
    pub fn parse(s: &str) -> Sink {
        if s.starts_with("http://") || s.starts_with("https://") {
            Sink::Http(s.to_string())
        } else {
            Sink::Dir(PathBuf::from(s))
        }
    }

    fn send(&self, name: &str, body: &[u8]) -> Result<()> {
        match self {
            Sink::Dir(d) => {
                std::fs::create_dir_all(d)?;
                let mut f = std::fs::File::create(d.join(name))?;
                f.write_all(body)?;
                f.sync_all()?;
            }
            Sink::Http(url) => {
                let resp = ureq::post(url).set("Content-Type", "audio/wav").send_bytes(body);
                match resp {
                    Ok(r) => {
                        // drain so the connection completes
                        let mut sink = Vec::new();
                        r.into_reader().take(1 << 20).read_to_end(&mut sink)?;
                    }
                    Err(e) => bail!("upload to {url} failed: {e}"),
                }
            }
        }
        Ok(())
    }
}

pub const STAGE_LOAD: &str = "load";
pub const STAGE_PREPROCESS: &str = "preprocess";
pub const STAGE_CONVERT: &str = "convert";
pub const STAGE_GENERATE: &str = "generate";
pub const STAGE_UPLOAD: &str = "upload";
pub const STAGE_TOTAL: &str = "total";

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub run: usize,
    pub stage: &'static str,
    pub millis: f64,
    /// Peak resident set of the process so far (0 when unavailable).
    pub peak_mem_bytes: u64,
    /// Wall-clock window, for energy attribution.
    pub start_epoch_ms: f64,
    pub end_epoch_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub mode: Mode,
    /// Stage rows followed by one `total` row, per run.
    pub records: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl OverheadReport {
    pub fn runs(&self) -> usize {
        self.records.iter().filter(|r| r.stage == STAGE_TOTAL).count()
    }

    pub fn stages(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for r in &self.records {
            if r.stage != STAGE_TOTAL && !out.contains(&r.stage) {
                out.push(r.stage);
            }
        }
        out
    }

    pub fn summary(&self, stage: &str) -> Option<Summary> {
        let mut v: Vec<f64> = self.records.iter().filter(|r| r.stage == stage).map(|r| r.millis).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Summary { median, min: v[0], max: v[n - 1] })
    }

    /// `run,stage,millis,peak_mem_bytes`
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["run", "stage", "millis", "peak_mem_bytes"])?;
        for r in &self.records {
            out.write_record([r.run.to_string(), r.stage.to_string(), format!("{:.4}", r.millis), r.peak_mem_bytes.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_memory_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1).and_then(|v| v.parse::<u64>().ok()))
        })
        .map(|kb| kb * 1024)
        .unwrap_or(0)
}

fn epoch_ms() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64() * 1000.0).unwrap_or(0.0)
}

struct Clock {
    anchor_epoch: f64,
    anchor: Instant,
}

impl Clock {
    fn new() -> Self {
        Self { anchor_epoch: epoch_ms(), anchor: Instant::now() }
    }

    /// Epoch milliseconds derived from the monotonic clock.
    fn at(&self, t: Instant) -> f64 {
        self.anchor_epoch + t.duration_since(self.anchor).as_secs_f64() * 1000.0
    }
}

/// Time `runs` passes over `input`. `filter` is required in filtered mode.
pub fn measure_overhead(input: &Path, filter: Option<&FrozenFilter>, mode: Mode, runs: usize, sink: &Sink) -> Result<OverheadReport> {
    if runs == 0 {
        bail!("runs must be at least 1");
    }
    let filter = match (mode, filter) {
        (Mode::Filtered, None) => bail!("filtered mode needs a filter"),
        (_, f) => f,
    };
    let clock = Clock::new();
    let mut records = Vec::new();
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("input.wav").to_string();
    for run in 0..runs {
        let run_start = Instant::now();
        let stage = |stage: &'static str, t0: Instant, t1: Instant, recs: &mut Vec<StageRecord>| {
            recs.push(StageRecord {
                run,
                stage,
                millis: t1.duration_since(t0).as_secs_f64() * 1000.0,
                peak_mem_bytes: peak_memory_bytes(),
                start_epoch_ms: clock.at(t0),
                end_epoch_ms: clock.at(t1),
            });
        };

        let t0 = Instant::now();
        let wave = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
        let t1 = Instant::now();
        stage(STAGE_LOAD, t0, t1, &mut records);

        let out: Waveform = match mode {
            Mode::Baseline => wave,
            Mode::Filtered => {
                let f = filter.expect("checked above");
                let t0 = Instant::now();
                let feat = preprocess(&wave, f)?;
                let t1 = Instant::now();
                stage(STAGE_PREPROCESS, t0, t1, &mut records);
                let conv = convert(&feat, f)?;
                let t2 = Instant::now();
                stage(STAGE_CONVERT, t1, t2, &mut records);
                let w = generate(&conv)?;
                let t3 = Instant::now();
                stage(STAGE_GENERATE, t2, t3, &mut records);
                w
            }
        };

        let t0 = Instant::now();
        sink.send(&format!("run{run}-{name}"), &wav_bytes(&out)?)?;
        let t1 = Instant::now();
        stage(STAGE_UPLOAD, t0, t1, &mut records);
        stage(STAGE_TOTAL, run_start, Instant::now(), &mut records);
    }
    Ok(OverheadReport { mode, records })
}

/// One meter reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub epoch_millis: f64,
    pub watts: f64,
}

/// Parse a meter CSV with header `epoch_millis,watts`; rows are sorted by time.
pub fn read_meter_csv(r: impl Read) -> Result<Vec<PowerSample>> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers()?.clone();
    if head.len() != 2 || &head[0] != "epoch_millis" || &head[1] != "watts" {
        bail!("meter CSV header must be epoch_millis,watts");
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| rec[j].trim().parse::<f64>().with_context(|| format!("meter row {}: bad number {:?}", i + 2, &rec[j]));
        out.push(PowerSample { epoch_millis: parse(0)?, watts: parse(1)? });
    }
    out.sort_by(|a, b| a.epoch_millis.total_cmp(&b.epoch_millis));
    Ok(out)
}

fn watts_at(s: &[PowerSample], t: f64) -> f64 {
    let i = s.partition_point(|p| p.epoch_millis <= t);
    if i == 0 {
        return s[0].watts;
    }
    if i == s.len() {
        return s[s.len() - 1].watts;
    }
    let (a, b) = (s[i - 1], s[i]);
    a.watts + (b.watts - a.watts) * (t - a.epoch_millis) / (b.epoch_millis - a.epoch_millis)
}

/// Joules over [t0, t1] (epoch ms) by trapezoidal integration of the
/// piecewise-linear power trace, held constant beyond its ends.
pub fn energy_joules(s: &[PowerSample], t0: f64, t1: f64) -> f64 {
    if s.is_empty() || t1 <= t0 {
        return 0.0;
    }
    let mut knots = vec![t0];
    knots.extend(s.iter().map(|p| p.epoch_millis).filter(|&t| t > t0 && t < t1));
    knots.push(t1);
    knots.windows(2).map(|w| 0.5 * (watts_at(s, w[0]) + watts_at(s, w[1])) * (w[1] - w[0]) / 1000.0).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub run: usize,
    pub stage: &'static str,
    pub joules: f64,
    pub mean_watts: f64,
}

pub fn attribute_energy(report: &OverheadReport, meter: &[PowerSample]) -> Vec<EnergyRecord> {
    report
        .records
        .iter()
        .map(|r| {
            let j = energy_joules(meter, r.start_epoch_ms, r.end_epoch_ms);
            let secs = (r.end_epoch_ms - r.start_epoch_ms) / 1000.0;
            EnergyRecord { run: r.run, stage: r.stage, joules: j, mean_watts: if secs > 0.0 { j / secs } else { 0.0 } }
        })
        .collect()
}

/// `run,stage,joules,mean_watts`
pub fn write_energy_csv(rows: &[EnergyRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "stage", "joules", "mean_watts"])?;
    for r in rows {
        out.write_record([r.run.to_string(), r.stage.to_string(), format!("{:.6}", r.joules), format!("{:.6}", r.mean_watts)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_power_energy() {
        let s = [PowerSample { epoch_millis: 0.0, watts: 2.0 }, PowerSample { epoch_millis: 10_000.0, watts: 2.0 }];
        assert!((energy_joules(&s, 1000.0, 3000.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_energy_matches_closed_form() {
        // P(t) = t/1000 W with t in ms; ∫ from 0 to 2 s of t dt = 2 J
        let s: Vec<PowerSample> = (0..=4).map(|i| PowerSample { epoch_millis: i as f64 * 500.0, watts: i as f64 * 0.5 }).collect();
        assert!((energy_joules(&s, 0.0, 2000.0) - 2.0).abs() < 1e-12);
        // window between knots
        assert!((energy_joules(&s, 250.0, 750.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn meter_header_is_checked() {
        assert!(read_meter_csv("time,watts\n1,2\n".as_bytes()).is_err());
        let s = read_meter_csv("epoch_millis,watts\n20,1.5\n10,0.5\n".as_bytes()).unwrap();
        assert_eq!(s[0].epoch_millis, 10.0);
    }

    #[test]
    fn sink_parsing() {
        assert_eq!(Sink::parse("http://host:8080/up"), Sink::Http("http://host:8080/up".into()));
        assert_eq!(Sink::parse("out/dir"), Sink::Dir("out/dir".into()));
    }
}
