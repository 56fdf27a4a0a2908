//! Run configuration: a TOML file with one section per component.
//!
//! ```toml
//! [vocoder]
//! frame_period_ms = 5.0
//! [train]
//! iterations = 7500
//! [paths]
//! corpus = "ravdess/Actor_01"
//! ```
//!
//! Absent keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use sanitone_core::cyclegan::{ArchDescriptor, TrainConfig};
use sanitone_core::evaluation::ClassifierConfig;
use sanitone_core::features::FeatureConfig;
use sanitone_core::pipeline::{EmotionLabel, SplitSpec};
use sanitone_core::vocoder::VocoderConfig;
use toml::{Table, Value};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid value for {section}.{key}: {message}")]
    Validation { section: String, key: String, message: String },
    #[error("cannot read {0}: {1}")]
    Io(String, String),
}

impl ConfigError {
    /// Offending key for validation errors.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    /// Directory of RAVDESS-named WAV files.
    pub corpus: Option<PathBuf>,
    /// Manifest CSV; takes precedence over scanning `corpus`.
    pub manifest: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub filter: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Emotions forming domain X; more than one pools them into one filter.
    pub emotional: Vec<EmotionLabel>,
    pub neutral: Vec<EmotionLabel>,
    pub split: SplitSpec,
    pub disjoint_text: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            emotional: vec![EmotionLabel::Angry],
            neutral: vec![EmotionLabel::Neutral],
            split: SplitSpec::TrainFraction(0.8),
            disjoint_text: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub vocoder: VocoderConfig,
    pub features: FeatureConfig,
    pub arch: ArchDescriptor,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub corpus: CorpusConfig,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        let features = FeatureConfig::default();
        Self {
            vocoder: VocoderConfig::default(),
            arch: ArchDescriptor { feature_dim: features.model_dim(), ..Default::default() },
            features,
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            corpus: CorpusConfig::default(),
            paths: Paths::default(),
        }
    }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn bad(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Validation { section: self.name.into(), key: key.into(), message: message.into() }
    }

    fn value(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(self.bad(k, "unknown key"));
            }
        }
        Ok(())
    }

    fn f64(&self, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        match self.value(key) {
            None => Ok(()),
            Some(Value::Float(v)) => {
                *slot = *v;
                Ok(())
            }
            Some(Value::Integer(v)) => {
                *slot = *v as f64;
                Ok(())
            }
            Some(_) => Err(self.bad(key, "expected a number")),
        }
    }

    fn usize(&self, key: &str, slot: &mut usize) -> Result<(), ConfigError> {
        match self.value(key) {
            None => Ok(()),
            Some(Value::Integer(v)) if *v >= 0 => {
                *slot = *v as usize;
                Ok(())
            }
            Some(_) => Err(self.bad(key, "expected a nonnegative integer")),
        }
    }

    fn u64(&self, key: &str, slot: &mut u64) -> Result<(), ConfigError> {
        let mut v = *slot as usize;
        self.usize(key, &mut v)?;
        *slot = v as u64;
        Ok(())
    }

    fn bool(&self, key: &str, slot: &mut bool) -> Result<(), ConfigError> {
        match self.value(key) {
            None => Ok(()),
            Some(Value::Boolean(v)) => {
                *slot = *v;
                Ok(())
            }
            Some(_) => Err(self.bad(key, "expected true or false")),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Result<Option<PathBuf>, ConfigError> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(base.join(s))),
            Some(_) => Err(self.bad(key, "expected a path string")),
        }
    }

    fn labels(&self, key: &str, slot: &mut Vec<EmotionLabel>) -> Result<(), ConfigError> {
        let Some(v) = self.value(key) else { return Ok(()) };
        let Value::Array(items) = v else { return Err(self.bad(key, "expected a list of emotion names")) };
        let mut out = Vec::new();
        for it in items {
            let name = it.as_str().ok_or_else(|| self.bad(key, "expected a list of emotion names"))?;
            out.push(name.parse::<EmotionLabel>().map_err(|_| self.bad(key, format!("unknown emotion {name:?}")))?);
        }
        *slot = out;
        Ok(())
    }

    fn positive(&self, key: &str, v: f64) -> Result<(), ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(self.bad(key, "must be positive"))
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parse config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, origin: &str, base: &Path) -> Result<Config, ConfigError> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: origin.into(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    const SECTIONS: [&str; 8] = ["vocoder", "features", "arch", "train", "classifier", "corpus", "paths", "split"];
    for (k, v) in &doc {
        if !SECTIONS.contains(&k.as_str()) || !v.is_table() {
            return Err(ConfigError::Validation { section: "(top level)".into(), key: k.clone(), message: "unknown section".into() });
        }
    }
    let sec = |name: &'static str| Section { name, table: doc.get(name).and_then(Value::as_table) };
    let mut c = Config::default();

    let s = sec("vocoder");
    s.check_keys(&["frame_period_ms", "fft_size", "f0_floor_hz", "f0_ceil_hz"])?;
    let v = &mut c.vocoder;
    s.f64("frame_period_ms", &mut v.frame_period_ms)?;
    s.usize("fft_size", &mut v.fft_size)?;
    s.f64("f0_floor_hz", &mut v.f0_floor_hz)?;
    s.f64("f0_ceil_hz", &mut v.f0_ceil_hz)?;
    s.positive("frame_period_ms", v.frame_period_ms)?;
    if !v.fft_size.is_power_of_two() || v.fft_size < 512 {
        return Err(s.bad("fft_size", "must be a power of two ≥ 512"));
    }
    s.positive("f0_floor_hz", v.f0_floor_hz)?;
    if v.f0_ceil_hz <= v.f0_floor_hz {
        return Err(s.bad("f0_ceil_hz", "must exceed f0_floor_hz"));
    }

    let s = sec("features");
    s.check_keys(&["order", "alpha", "energy_passthrough"])?;
    let f = &mut c.features;
    s.usize("order", &mut f.order)?;
    s.f64("alpha", &mut f.alpha)?;
    s.bool("energy_passthrough", &mut f.energy_passthrough)?;
    if f.order == 0 || f.order >= c.vocoder.fft_size / 2 {
        return Err(s.bad("order", "must lie in 1..fft_size/2"));
    }
    if !(f.alpha > -1.0 && f.alpha < 1.0) {
        return Err(s.bad("alpha", "must lie in (-1, 1)"));
    }

    let s = sec("arch");
    s.check_keys(&[
        "gen_hidden",
        "gen_downsample",
        "gen_res_blocks",
        "gen_kernel",
        "gen_res_kernel",
        "gen_skip",
        "disc_hidden",
        "disc_layers",
        "disc_kernel",
    ])?;
    let a = &mut c.arch;
    a.feature_dim = c.features.model_dim();
    s.usize("gen_hidden", &mut a.gen_hidden)?;
    s.usize("gen_downsample", &mut a.gen_downsample)?;
    s.usize("gen_res_blocks", &mut a.gen_res_blocks)?;
    s.usize("gen_kernel", &mut a.gen_kernel)?;
    s.usize("gen_res_kernel", &mut a.gen_res_kernel)?;
    s.bool("gen_skip", &mut a.gen_skip)?;
    s.usize("disc_hidden", &mut a.disc_hidden)?;
    s.usize("disc_layers", &mut a.disc_layers)?;
    s.usize("disc_kernel", &mut a.disc_kernel)?;
    for (k, v) in [("gen_kernel", a.gen_kernel), ("gen_res_kernel", a.gen_res_kernel), ("disc_kernel", a.disc_kernel)] {
        if v % 2 == 0 {
            return Err(s.bad(k, "must be odd"));
        }
    }
    if a.disc_hidden == 0 {
        return Err(s.bad("disc_hidden", "must be positive"));
    }
    if a.disc_layers == 0 {
        return Err(s.bad("disc_layers", "must be positive"));
    }
    if a.gen_downsample > 6 {
        return Err(s.bad("gen_downsample", "at most 6"));
    }

    let s = sec("train");
    s.check_keys(&[
        "iterations",
        "lr_generator",
        "lr_discriminator",
        "lambda_cycle",
        "lambda_identity",
        "identity_cutoff_iter",
        "lr_decay_fraction",
        "segment_frames",
        "batch_size",
        "seed",
    ])?;
    let t = &mut c.train;
    s.usize("iterations", &mut t.iterations)?;
    s.f64("lr_generator", &mut t.lr_generator)?;
    s.f64("lr_discriminator", &mut t.lr_discriminator)?;
    s.f64("lambda_cycle", &mut t.lambda_cycle)?;
    s.f64("lambda_identity", &mut t.lambda_identity)?;
    s.usize("identity_cutoff_iter", &mut t.identity_cutoff_iter)?;
    s.f64("lr_decay_fraction", &mut t.lr_decay_fraction)?;
    s.usize("segment_frames", &mut t.segment_frames)?;
    s.usize("batch_size", &mut t.batch_size)?;
    s.u64("seed", &mut t.seed)?;
    if t.iterations == 0 {
        return Err(s.bad("iterations", "must be positive"));
    }
    s.positive("lr_generator", t.lr_generator)?;
    s.positive("lr_discriminator", t.lr_discriminator)?;
    for (k, v) in [("lambda_cycle", t.lambda_cycle), ("lambda_identity", t.lambda_identity)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(s.bad(k, "must be nonnegative"));
        }
    }
    if !(0.0..=1.0).contains(&t.lr_decay_fraction) {
        return Err(s.bad("lr_decay_fraction", "must lie in [0, 1]"));
    }
    if t.batch_size != 1 {
        return Err(s.bad("batch_size", "only 1 is supported"));
    }
    let m = c.arch.time_multiple();
    let min_seg = c.arch.receptive_field().min(8 * m);
    if t.segment_frames % m != 0 || t.segment_frames < min_seg {
        return Err(s.bad("segment_frames", format!("must be a multiple of {m} and at least {min_seg}")));
    }

    let s = sec("classifier");
    s.check_keys(&["hidden", "epochs", "learning_rate", "seed"])?;
    let k = &mut c.classifier;
    s.usize("hidden", &mut k.hidden)?;
    s.usize("epochs", &mut k.epochs)?;
    s.f64("learning_rate", &mut k.learning_rate)?;
    s.u64("seed", &mut k.seed)?;
    s.positive("learning_rate", k.learning_rate)?;
    if k.hidden == 0 {
        return Err(s.bad("hidden", "must be positive"));
    }

    let s = sec("corpus");
    s.check_keys(&["emotional", "neutral", "disjoint_text"])?;
    s.labels("emotional", &mut c.corpus.emotional)?;
    s.labels("neutral", &mut c.corpus.neutral)?;
    s.bool("disjoint_text", &mut c.corpus.disjoint_text)?;
    if c.corpus.emotional.is_empty() {
        return Err(s.bad("emotional", "needs at least one emotion"));
    }
    if c.corpus.neutral.is_empty() {
        return Err(s.bad("neutral", "needs at least one emotion"));
    }
    if let Some(e) = c.corpus.emotional.iter().find(|e| c.corpus.neutral.contains(e)) {
        return Err(s.bad("neutral", format!("{e} is also listed as emotional")));
    }

    let s = sec("split");
    s.check_keys(&["train_fraction", "train", "test"])?;
    match (s.value("train_fraction"), s.value("train"), s.value("test")) {
        (None, None, None) => {}
        (Some(_), None, None) => {
            let mut fr = 0.0;
            s.f64("train_fraction", &mut fr)?;
            if !(fr > 0.0 && fr < 1.0) {
                return Err(s.bad("train_fraction", "must lie in (0, 1)"));
            }
            c.corpus.split = SplitSpec::TrainFraction(fr);
        }
        (None, Some(_), Some(_)) => {
            let (mut train, mut test) = (0, 0);
            s.usize("train", &mut train)?;
            s.usize("test", &mut test)?;
            c.corpus.split = SplitSpec::Counts { train, test };
        }
        (Some(_), _, _) => return Err(s.bad("train_fraction", "give either train_fraction or train/test counts")),
        (None, Some(_), None) => return Err(s.bad("test", "required with train")),
        (None, None, Some(_)) => return Err(s.bad("train", "required with test")),
    }

    let s = sec("paths");
    s.check_keys(&["corpus", "manifest", "cache", "filter", "reports"])?;
    c.paths = Paths {
        corpus: s.path("corpus", base)?,
        manifest: s.path("manifest", base)?,
        cache: s.path("cache", base)?,
        filter: s.path("filter", base)?,
        reports: s.path("reports", base)?,
    };
    if let Some(p) = &c.paths.corpus {
        if !p.is_dir() {
            return Err(s.bad("corpus", format!("{} is not a directory", p.display())));
        }
    }
    if let Some(p) = &c.paths.manifest {
        if !p.is_file() {
            return Err(s.bad("manifest", format!("{} does not exist", p.display())));
        }
    }
    Ok(c)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io(p.display().to_string(), e.to_string()))?;
    let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &p.display().to_string(), &base)
}
