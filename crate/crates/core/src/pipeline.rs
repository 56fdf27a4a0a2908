//! Corpus handling (RAVDESS-style names, manifests, splits), cached feature
//! extraction, and end-to-end sanitization with a frozen filter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, resample, Waveform};
use crate::cyclegan::{self, ArchDescriptor, CycleGanModel, FrozenFilter, TrainConfig, TrainHistory};
use crate::features::{self, compute_f0_stats, convert_log_f0, F0Stats, FeatureStats, mcep_to_sp, sp_to_mcep, FeatureConfig, McepSequence};
use crate::vocoder::{self, read_f64, read_u32, read_u64, AnalysisResult, VocoderConfig};
use crate::{Error, Result};

/// Rate every analysis runs at.
pub const ANALYSIS_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmotionLabel {
    Neutral = 0,
    Calm = 1,
    Happy = 2,
    Sad = 3,
    Angry = 4,
    Fearful = 5,
    Disgust = 6,
    Surprised = 7,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 8] = [
        Self::Neutral,
        Self::Calm,
        Self::Happy,
        Self::Sad,
        Self::Angry,
        Self::Fearful,
        Self::Disgust,
        Self::Surprised,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        ["neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised"][self as usize]
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if let Ok(c) = t.parse::<u8>() {
            return Self::from_code(c).ok_or_else(|| Error::MalformedName(format!("emotion code {c}")));
        }
        Self::ALL.into_iter().find(|e| e.name() == t).ok_or_else(|| Error::MalformedName(format!("emotion {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
}

/// X = emotional (source), Y = neutral (target).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub actor_id: u32,
    pub emotion: EmotionLabel,
    pub statement_id: u32,
    pub repetition: u32,
    pub intensity: u32,
    pub role: Option<Role>,
    pub domain: Option<Domain>,
}

/// Parse `MM-VV-EE-II-SS-RR-AA.wav` (modality, vocal channel, emotion,
/// intensity, statement, repetition, actor).
pub fn parse_ravdess_filename(name: &str) -> Result<CorpusEntry> {
    let bad = || Error::MalformedName(name.to_string());
    let file = Path::new(name).file_name().and_then(|f| f.to_str()).ok_or_else(bad)?;
    let stem = file.strip_suffix(".wav").or_else(|| file.strip_suffix(".WAV")).ok_or_else(bad)?;
    let fields: Vec<&str> = stem.split('-').collect();
    if fields.len() != 7 || fields.iter().any(|f| f.len() != 2 || !f.bytes().all(|b| b.is_ascii_digit())) {
        return Err(bad());
    }
    let n: Vec<u32> = fields.iter().map(|f| f.parse().expect("two digits")).collect();
    let emotion = match n[2] {
        1..=8 => EmotionLabel::from_code(n[2] as u8 - 1).expect("in range"),
        _ => return Err(bad()),
    };
    if !(1..=24).contains(&n[6]) {
        return Err(bad());
    }
    Ok(CorpusEntry {
        path: PathBuf::from(name),
        actor_id: n[6],
        emotion,
        intensity: n[3],
        statement_id: n[4],
        repetition: n[5],
        role: None,
        domain: None,
    })
}

/// File name following the same convention (audio-only speech).
pub fn ravdess_filename(emotion: EmotionLabel, intensity: u32, statement: u32, repetition: u32, actor: u32) -> String {
    format!("03-01-{:02}-{intensity:02}-{statement:02}-{repetition:02}-{actor:02}.wav", emotion.code() + 1)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

const MANIFEST_HEADER: [&str; 8] = ["path", "actor", "emotion", "statement", "repetition", "intensity", "role", "domain"];

impl Corpus {
    /// Every RAVDESS-named file under `dir`, searched recursively (the
    /// distribution nests files in `Actor_NN/` folders), sorted by path.
    /// Files with other names are skipped.
    pub fn scan_dir(dir: impl AsRef<Path>) -> Result<Corpus> {
        let mut paths = Vec::new();
        let mut pending = vec![dir.as_ref().to_path_buf()];
        while let Some(d) = pending.pop() {
            for e in fs::read_dir(&d)? {
                let p = e?.path();
                if p.is_dir() {
                    pending.push(p);
                } else {
                    paths.push(p);
                }
            }
        }
        paths.sort();
        let mut entries = Vec::new();
        for p in paths {
            let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
            if let Ok(mut e) = parse_ravdess_filename(name) {
                e.path = p.clone();
                entries.push(e);
            }
        }
        Ok(Corpus { entries })
    }

    /// Tag emotions in `emotional` as X and `neutral` as Y; others stay untagged.
    pub fn tag_domains(&mut self, emotional: &[EmotionLabel], neutral: &[EmotionLabel]) {
        for e in &mut self.entries {
            e.domain = if emotional.contains(&e.emotion) {
                Some(Domain::X)
            } else if neutral.contains(&e.emotion) {
                Some(Domain::Y)
            } else {
                None
            };
        }
    }

    pub fn select(&self, role: Option<Role>, domain: Option<Domain>) -> Vec<&CorpusEntry> {
        self.entries
            .iter()
            .filter(|e| role.is_none_or(|r| e.role == Some(r)) && domain.is_none_or(|d| e.domain == Some(d)))
            .collect()
    }

    pub fn write_manifest(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            out.write_record([
                e.path.to_string_lossy().into_owned(),
                e.actor_id.to_string(),
                e.emotion.name().to_string(),
                e.statement_id.to_string(),
                e.repetition.to_string(),
                e.intensity.to_string(),
                match e.role {
                    Some(Role::Train) => "train",
                    Some(Role::Test) => "test",
                    None => "",
                }
                .to_string(),
                match e.domain {
                    Some(Domain::X) => "X",
                    Some(Domain::Y) => "Y",
                    None => "",
                }
                .to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a manifest; relative paths are resolved against `base`.
    pub fn read_manifest(r: impl Read, base: Option<&Path>) -> Result<Corpus> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Format(format!("manifest header must be {}", MANIFEST_HEADER.join(","))));
        }
        let mut entries = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let num = |k: usize| -> Result<u32> {
                field(k).parse().map_err(|_| Error::Format(format!("manifest row {}: bad {}", i + 2, MANIFEST_HEADER[k])))
            };
            let mut path = PathBuf::from(field(0));
            if let (Some(b), true) = (base, path.is_relative()) {
                path = b.join(path);
            }
            entries.push(CorpusEntry {
                path,
                actor_id: num(1)?,
                emotion: field(2).parse()?,
                statement_id: num(3)?,
                repetition: num(4)?,
                intensity: num(5)?,
                role: match field(6) {
                    "train" => Some(Role::Train),
                    "test" => Some(Role::Test),
                    "" => None,
                    r => return Err(Error::Format(format!("manifest row {}: role {r}", i + 2))),
                },
                domain: match field(7) {
                    "X" | "x" => Some(Domain::X),
                    "Y" | "y" => Some(Domain::Y),
                    "" => None,
                    d => return Err(Error::Format(format!("manifest row {}: domain {d}", i + 2))),
                },
            });
        }
        Ok(Corpus { entries })
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
        let p = path.as_ref();
        let f = fs::File::open(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?;
        Corpus::read_manifest(BufReader::new(f), p.parent())
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_manifest(BufWriter::new(fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    TrainFraction(f64),
    Counts { train: usize, test: usize },
}

/// Assign train/test roles deterministically from `seed`. With
/// `disjoint_text`, whole statements go to one side.
pub fn split_corpus(c: &Corpus, spec: SplitSpec, seed: u64, disjoint_text: bool) -> Result<Corpus> {
    let n = c.entries.len();
    let (n_train, n_test) = match spec {
        SplitSpec::TrainFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InfeasibleSplit(format!("train fraction {f}")));
            }
            let t = (f * n as f64).round() as usize;
            (t, n - t)
        }
        SplitSpec::Counts { train, test } => (train, test),
    };
    if n_train + n_test > n {
        return Err(Error::InfeasibleSplit(format!("{n_train} + {n_test} requested from {n} entries")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = c.clone();
    out.entries.iter_mut().for_each(|e| e.role = None);
    if !disjoint_text {
        for (k, &i) in order.iter().enumerate() {
            out.entries[i].role = if k < n_train {
                Some(Role::Train)
            } else if k < n_train + n_test {
                Some(Role::Test)
            } else {
                None
            };
        }
        return Ok(out);
    }
    // group by statement in shuffled order, then fill train group by group
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        groups.entry(c.entries[i].statement_id).or_default().push(i);
    }
    let mut keys: Vec<u32> = groups.keys().copied().collect();
    keys.shuffle(&mut rng);
    let mut train_keys = BTreeSet::new();
    let mut have = 0;
    for k in &keys {
        if have >= n_train {
            break;
        }
        train_keys.insert(*k);
        have += groups[k].len();
    }
    let pool_train: Vec<usize> = order.iter().copied().filter(|&i| train_keys.contains(&c.entries[i].statement_id)).collect();
    let pool_test: Vec<usize> = order.iter().copied().filter(|&i| !train_keys.contains(&c.entries[i].statement_id)).collect();
    if pool_train.len() < n_train || pool_test.len() < n_test {
        return Err(Error::InfeasibleSplit(format!(
            "{n_train}/{n_test} with disjoint statements: train side can hold {}, test side {}",
            pool_train.len(),
            pool_test.len()
        )));
    }
    for &i in &pool_train[..n_train] {
        out.entries[i].role = Some(Role::Train);
    }
    for &i in &pool_test[..n_test] {
        out.entries[i].role = Some(Role::Test);
    }
    Ok(out)
}

/// Read a WAV and bring it to the analysis rate.
pub fn load_for_analysis(path: impl AsRef<Path>) -> Result<Waveform> {
    let p = path.as_ref();
    if !p.exists() {
        return Err(Error::MissingFile(p.to_path_buf()));
    }
    Ok(resample(&read_wav(p)?, ANALYSIS_RATE_HZ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub analysis: AnalysisResult,
    pub mcep: McepSequence,
}

impl FeatureSet {
    pub fn compute(w: &Waveform, vc: &VocoderConfig, fc: &FeatureConfig) -> Result<Self> {
        let w = resample(w, ANALYSIS_RATE_HZ);
        let analysis = vocoder::analyze(&w, vc)?;
        let mcep = sp_to_mcep(&analysis.spectral_envelope, fc.order, fc.alpha)?;
        Ok(Self { analysis, mcep })
    }

    fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.analysis.write_to(&mut w)?;
        w.write_all(&(self.mcep.frames() as u64).to_le_bytes())?;
        w.write_all(&(self.mcep.order as u32).to_le_bytes())?;
        w.write_all(&self.mcep.alpha.to_le_bytes())?;
        for v in self.mcep.coeffs.iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from(mut r: impl Read) -> Result<Self> {
        let analysis = AnalysisResult::read_from(&mut r)?;
        let frames = read_u64(&mut r)? as usize;
        let order = read_u32(&mut r)? as usize;
        let alpha = read_f64(&mut r)?;
        let mut coeffs = Vec::with_capacity(frames);
        for _ in 0..frames {
            coeffs.push((0..=order).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self { analysis, mcep: McepSequence { coeffs, order, alpha } })
    }
}

#[derive(Debug, Default)]
pub struct FeatureCache {
    pub features: BTreeMap<PathBuf, FeatureSet>,
    pub errors: Vec<(PathBuf, Error)>,
    /// Entries served from the on-disk cache rather than recomputed.
    pub cache_hits: usize,
}

const CACHE_MAGIC: &[u8; 4] = b"SFC1";

fn config_fingerprint(vc: &VocoderConfig, fc: &FeatureConfig) -> u32 {
    let s = format!("{:?}|{:?}|{:?}|{:?}|{}|{:?}", vc.frame_period_ms, vc.fft_size, vc.f0_floor_hz, vc.f0_ceil_hz, fc.order, fc.alpha);
    crc32fast::hash(s.as_bytes())
}

fn cache_path(dir: &Path, src: &Path) -> PathBuf {
    let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("entry");
    let key = crc32fast::hash(src.to_string_lossy().as_bytes());
    dir.join(format!("{stem}-{key:08x}.feat"))
}

fn extract_one(path: &Path, vc: &VocoderConfig, fc: &FeatureConfig, cache_dir: Option<&Path>) -> Result<(FeatureSet, bool)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let src_crc = crc32fast::hash(&bytes);
    let cfg_crc = config_fingerprint(vc, fc);
    let cpath = cache_dir.map(|d| cache_path(d, path));
    if let Some(cp) = &cpath {
        if let Ok(data) = fs::read(cp) {
            if data.len() > 12 && &data[..4] == CACHE_MAGIC && data[4..8] == src_crc.to_le_bytes() && data[8..12] == cfg_crc.to_le_bytes() {
                if let Ok(f) = FeatureSet::read_from(&data[12..]) {
                    return Ok((f, true));
                }
            }
        }
    }
    let w = crate::audio::read_wav_bytes(&bytes)?;
    let f = FeatureSet::compute(&w, vc, fc)?;
    if let Some(cp) = &cpath {
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&src_crc.to_le_bytes());
        buf.extend_from_slice(&cfg_crc.to_le_bytes());
        f.write_to(&mut buf)?;
        fs::write(cp, buf)?;
    }
    Ok((f, false))
}

/// Analyze every entry (in parallel), reusing `cache_dir` when the source
/// bytes and configuration are unchanged. Per-entry failures are collected.
pub fn extract_features(c: &Corpus, vc: &VocoderConfig, fc: &FeatureConfig, cache_dir: Option<&Path>) -> Result<FeatureCache> {
    vc.validate()?;
    fc.validate()?;
    if let Some(d) = cache_dir {
        fs::create_dir_all(d)?;
    }
    let paths: Vec<&Path> = c.entries.iter().map(|e| e.path.as_path()).collect();
    let results = parallel_map(&paths, |p| extract_one(p, vc, fc, cache_dir));
    let mut out = FeatureCache::default();
    for (p, r) in paths.into_iter().zip(results) {
        match r {
            Ok((f, hit)) => {
                out.cache_hits += hit as usize;
                out.features.insert(p.to_path_buf(), f);
            }
            Err(e) => out.errors.push((p.to_path_buf(), e)),
        }
    }
    Ok(out)
}

/// Order-preserving map over `items` on up to [`crate::worker_threads`] threads.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = crate::worker_threads().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Checks that a filter's snapshot of configs is internally consistent.
pub fn check_filter(f: &FrozenFilter) -> Result<()> {
    let mismatch = |m: String| Err(Error::FilterConfigMismatch(m));
    if let Err(e) = f.vocoder.validate() {
        return mismatch(format!("vocoder: {e}"));
    }
    if f.features.order >= f.vocoder.fft_size / 2 {
        return mismatch(format!("order {} too high for fft_size {}", f.features.order, f.vocoder.fft_size));
    }
    if f.arch.feature_dim != f.features.model_dim() {
        return mismatch(format!("generator width {} but features give {}", f.arch.feature_dim, f.features.model_dim()));
    }
    for s in [&f.mcep_src, &f.mcep_tgt] {
        if s.width() != f.features.order + 1 {
            return mismatch(format!("statistics width {} but order {}", s.width(), f.features.order));
        }
    }
    Ok(())
}

/// Stage 1: resample, analyze, code the envelope.
pub fn preprocess(w: &Waveform, f: &FrozenFilter) -> Result<FeatureSet> {
    check_filter(f)?;
    FeatureSet::compute(w, &f.vocoder, &f.features)
}

/// Stage 2: map F0 and cepstra; aperiodicity and voicing pass through.
pub fn convert(feat: &FeatureSet, f: &FrozenFilter) -> Result<AnalysisResult> {
    let f0 = convert_log_f0(&feat.analysis.f0, &f.f0_src, &f.f0_tgt);
    let mcep = f.convert(&feat.mcep)?;
    let sp = mcep_to_sp(&mcep, f.vocoder.fft_size);
    let out = AnalysisResult { f0, spectral_envelope: sp, ..feat.analysis.clone() };
    out.validate()?;
    Ok(out)
}

/// Stage 3: resynthesize.
pub fn generate(a: &AnalysisResult) -> Result<Waveform> {
    vocoder::synthesize(a)
}

/// Emotion-filter a waveform. Output is at [`ANALYSIS_RATE_HZ`].
pub fn sanitize(w: &Waveform, f: &FrozenFilter) -> Result<Waveform> {
    let feat = preprocess(w, f)?;
    let conv = convert(&feat, f)?;
    generate(&conv)
}

/// Analysis → mel-cepstral coding → decoding → synthesis, with no conversion.
pub fn coded_round_trip(w: &Waveform, vc: &VocoderConfig, fc: &FeatureConfig) -> Result<Waveform> {
    let feat = FeatureSet::compute(w, vc, fc)?;
    let sp = mcep_to_sp(&feat.mcep, vc.fft_size);
    vocoder::synthesize(&AnalysisResult { spectral_envelope: sp, ..feat.analysis })
}

/// Drop c0 from every frame (generator view under energy passthrough).
pub fn model_view(m: &McepSequence, fc: &FeatureConfig) -> McepSequence {
    if !fc.energy_passthrough {
        return m.clone();
    }
    McepSequence { coeffs: m.coeffs.iter().map(|r| r[1..].to_vec()).collect(), order: m.order - 1, alpha: m.alpha }
}

/// Normalize with `stats` and reduce to the generator view.
pub fn training_view(seqs: &[&McepSequence], stats: &features::FeatureStats, fc: &FeatureConfig) -> Result<Vec<McepSequence>> {
    seqs.iter().map(|s| Ok(model_view(&stats.normalize(s)?, fc))).collect()
}

/// Normalization statistics a filter carries.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub mcep_src: FeatureStats,
    pub mcep_tgt: FeatureStats,
    pub f0_src: F0Stats,
    pub f0_tgt: F0Stats,
}

/// Cepstral and log-F0 statistics of each domain.
pub fn domain_stats(x: &[&FeatureSet], y: &[&FeatureSet]) -> Result<DomainStats> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(DomainStats {
        mcep_src: FeatureStats::from_corpus(x.iter().map(|f| &f.mcep))?,
        mcep_tgt: FeatureStats::from_corpus(y.iter().map(|f| &f.mcep))?,
        f0_src: compute_f0_stats(&x.iter().map(|f| f.analysis.f0.clone()).collect::<Vec<_>>())?,
        f0_tgt: compute_f0_stats(&y.iter().map(|f| f.analysis.f0.clone()).collect::<Vec<_>>())?,
    })
}

/// Output of [`fit_filter`].
#[derive(Debug)]
pub struct FittedFilter {
    pub filter: FrozenFilter,
    pub model: CycleGanModel,
    pub history: TrainHistory,
}

/// Estimate [`domain_stats`], train X→Y, and freeze.
pub fn fit_filter(
    x: &[&FeatureSet],
    y: &[&FeatureSet],
    vc: &VocoderConfig,
    fc: &FeatureConfig,
    arch: &ArchDescriptor,
    tc: &TrainConfig,
    on_iter: impl FnMut(usize, &cyclegan::LossBundle),
) -> Result<FittedFilter> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if arch.feature_dim != fc.model_dim() {
        return Err(Error::FilterConfigMismatch(format!("arch width {} but features give {}", arch.feature_dim, fc.model_dim())));
    }
    let DomainStats { mcep_src, mcep_tgt, f0_src, f0_tgt } = domain_stats(x, y)?;
    let cx = training_view(&x.iter().map(|f| &f.mcep).collect::<Vec<_>>(), &mcep_src, fc)?;
    let cy = training_view(&y.iter().map(|f| &f.mcep).collect::<Vec<_>>(), &mcep_tgt, fc)?;
    let (model, history) = cyclegan::train_with(&cx, &cy, arch, tc, on_iter)?;
    let filter = cyclegan::freeze(&model, f0_src, f0_tgt, mcep_src, mcep_tgt, *vc, *fc);
    Ok(FittedFilter { filter, model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_names() {
        let e = parse_ravdess_filename("03-01-01-01-01-01-01.wav").unwrap();
        assert_eq!((e.emotion, e.actor_id), (EmotionLabel::Neutral, 1));
        let e = parse_ravdess_filename("03-01-05-01-02-01-12.wav").unwrap();
        assert_eq!((e.emotion, e.actor_id, e.statement_id), (EmotionLabel::Angry, 12, 2));
        for bad in ["foo.wav", "03-01-09-01-01-01-01.wav", "03-01-01-01-01-01-25.wav", "03-01-01-01-01-01.wav", "03-01-01-01-01-01-01.mp3"] {
            assert!(matches!(parse_ravdess_filename(bad), Err(Error::MalformedName(_))), "{bad}");
        }
    }

    #[test]
    fn scan_descends_into_actor_folders() {
        let dir = tempfile::tempdir().unwrap();
        for a in [1, 2] {
            let d = dir.path().join(format!("Actor_{a:02}"));
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join(ravdess_filename(EmotionLabel::Sad, 1, 1, 1, a)), b"").unwrap();
            fs::write(d.join("notes.txt"), b"").unwrap();
        }
        let c = Corpus::scan_dir(dir.path()).unwrap();
        assert_eq!(c.entries.len(), 2);
        assert_eq!(c.entries.iter().map(|e| e.actor_id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn filename_round_trip() {
        for e in EmotionLabel::ALL {
            let n = ravdess_filename(e, 2, 1, 2, 17);
            let p = parse_ravdess_filename(&n).unwrap();
            assert_eq!((p.emotion, p.intensity, p.statement_id, p.repetition, p.actor_id), (e, 2, 1, 2, 17));
        }
    }

    #[test]
    fn eight_labels_with_codes() {
        assert_eq!(EmotionLabel::ALL.len(), 8);
        for (i, e) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(e.code() as usize, i);
            assert_eq!(e.name().parse::<EmotionLabel>().unwrap(), *e);
        }
    }

    fn synthetic(n: usize, statements: u32) -> Corpus {
        Corpus {
            entries: (0..n)
                .map(|i| {
                    let mut e = parse_ravdess_filename(&ravdess_filename(
                        EmotionLabel::ALL[i % 8],
                        1,
                        (i as u32 % statements) + 1,
                        1,
                        (i as u32 % 24) + 1,
                    ))
                    .unwrap();
                    e.path = PathBuf::from(format!("f{i}.wav"));
                    e
                })
                .collect(),
        }
    }

    #[test]
    fn exact_counts_96_22() {
        let c = synthetic(118, 2);
        let s = split_corpus(&c, SplitSpec::Counts { train: 96, test: 22 }, 7, false).unwrap();
        assert_eq!(s.select(Some(Role::Train), None).len(), 96);
        assert_eq!(s.select(Some(Role::Test), None).len(), 22);
        assert_eq!(s, split_corpus(&c, SplitSpec::Counts { train: 96, test: 22 }, 7, false).unwrap());
    }

    #[test]
    fn disjoint_text_separates_statements() {
        let c = synthetic(40, 2);
        let s = split_corpus(&c, SplitSpec::Counts { train: 10, test: 10 }, 3, true).unwrap();
        let train: BTreeSet<u32> = s.select(Some(Role::Train), None).iter().map(|e| e.statement_id).collect();
        let test: BTreeSet<u32> = s.select(Some(Role::Test), None).iter().map(|e| e.statement_id).collect();
        assert_eq!(train.len(), 1);
        assert!(train.is_disjoint(&test));
        assert!(matches!(split_corpus(&c, SplitSpec::Counts { train: 30, test: 5 }, 3, true), Err(Error::InfeasibleSplit(_))));
        assert!(matches!(split_corpus(&c, SplitSpec::Counts { train: 30, test: 15 }, 3, false), Err(Error::InfeasibleSplit(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let mut c = split_corpus(&synthetic(12, 2), SplitSpec::TrainFraction(0.5), 1, false).unwrap();
        c.tag_domains(&[EmotionLabel::Angry, EmotionLabel::Happy], &[EmotionLabel::Neutral]);
        let mut buf = Vec::new();
        c.write_manifest(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("path,actor,emotion,statement,repetition,intensity,role,domain\n"));
        assert_eq!(Corpus::read_manifest(&buf[..], None).unwrap(), c);
    }
}
