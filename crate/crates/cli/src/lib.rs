//! `sanitone` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error (synopsis on stderr), 2 runtime error.

pub mod bench;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sanitone_core::audio::{read_wav, write_wav};
use sanitone_core::cyclegan;
use sanitone_core::evaluation::{self, EvalItem, EvalReport};
use sanitone_core::pipeline::{self, Corpus, Domain, FeatureCache, FeatureSet, Role};

use bench::{Mode, Sink};
use config::{load_config, Config};

#[derive(Parser, Debug)]
#[command(name = "sanitone", version, about = "Emotion filtering for speech recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for splitting, training and the classifier.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze the corpus into the feature cache and write the split manifest.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Manifest output (default: <reports>/manifest.csv).
        #[arg(long)]
        manifest_out: Option<PathBuf>,
    },
    /// Train an emotional→neutral filter and freeze it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Filter output (default: paths.filter).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the full four-network checkpoint here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override train.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Freeze a checkpoint into a deployable filter.
    Freeze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Store weights as 32-bit floats.
        #[arg(long)]
        f32: bool,
    },
    /// Filter one file, or every WAV in a directory.
    Sanitize {
        #[arg(long)]
        filter: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// WER / speaker EER / emotion accuracy on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        filter: PathBuf,
        /// Directory of reference transcripts, `<utterance>.txt`.
        #[arg(long)]
        references: Option<PathBuf>,
        /// `platform=DIR` hypothesis transcripts; platforms are raw, cloud, edge.
        #[arg(long = "hypotheses", value_parser = parse_platform_dir)]
        hypotheses: Vec<(String, PathBuf)>,
        /// Output directory (default: paths.reports).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Stage timings of the edge path, baseline vs filtered.
    Bench {
        #[arg(long)]
        filter: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        /// baseline, filtered, or both.
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Upload target: a directory or an http(s) URL.
        #[arg(long)]
        sink: String,
        /// Overhead CSV (`run,stage,millis,peak_mem_bytes`, with a mode column prefix when both modes run).
        #[arg(long)]
        out: PathBuf,
        /// External power-meter CSV `epoch_millis,watts`.
        #[arg(long)]
        meter: Option<PathBuf>,
        #[arg(long)]
        energy_out: Option<PathBuf>,
    },
    /// Per-frame peak amplitude, intensity and F0 of a recording.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_platform_dir(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (p, d) = s.split_once('=').ok_or("expected platform=DIR")?;
    if !PLATFORMS.contains(&p) {
        return Err(format!("platform must be one of {PLATFORMS:?}"));
    }
    Ok((p.to_string(), PathBuf::from(d)))
}

/// Unfiltered, 64-bit filter, 32-bit filter.
pub const PLATFORMS: [&str; 3] = ["raw", "cloud", "edge"];

pub fn synopsis() -> &'static str {
    "usage: sanitone <extract|train|freeze|sanitize|evaluate|bench|stats> [options]\n       sanitone <command> --help for details"
}

/// Parse `args` (program name first) and execute. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{e}");
            eprintln!("{}", synopsis());
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract { common, manifest_out } => cmd_extract(&common, manifest_out),
        Command::Train { common, out, checkpoint, iterations } => cmd_train(&common, out, checkpoint, iterations),
        Command::Freeze { common, checkpoint, out, f32 } => cmd_freeze(&common, &checkpoint, &out, f32),
        Command::Sanitize { filter, input, out } => cmd_sanitize(&filter, &input, &out),
        Command::Evaluate { common, filter, references, hypotheses, out_dir } => {
            cmd_evaluate(&common, &filter, references, &hypotheses, out_dir)
        }
        Command::Bench { filter, input, mode, runs, sink, out, meter, energy_out } => {
            cmd_bench(filter.as_deref(), &input, &mode, runs, &sink, &out, meter.as_deref(), energy_out.as_deref())
        }
        Command::Stats { input, out } => cmd_stats(&input, out.as_deref()),
    }
}

fn config_of(common: &Common) -> Result<Config> {
    let mut c = match &common.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        c.train.seed = s;
        c.classifier.seed = s;
    }
    Ok(c)
}

/// Corpus with domain and role tags, restricted to the configured emotions.
fn prepared_corpus(c: &Config) -> Result<Corpus> {
    let mut corpus = match (&c.paths.manifest, &c.paths.corpus) {
        (Some(m), _) => Corpus::load_manifest(m)?,
        (None, Some(d)) => Corpus::scan_dir(d)?,
        (None, None) => bail!("no corpus configured: set paths.corpus or paths.manifest"),
    };
    corpus.tag_domains(&c.corpus.emotional, &c.corpus.neutral);
    corpus.entries.retain(|e| e.domain.is_some());
    if corpus.entries.is_empty() {
        bail!("corpus has no entries with the configured emotions");
    }
    if corpus.entries.iter().all(|e| e.role.is_none()) {
        corpus = pipeline::split_corpus(&corpus, c.corpus.split, c.train.seed, c.corpus.disjoint_text)?;
    }
    Ok(corpus)
}

fn features_for(c: &Config, corpus: &Corpus) -> Result<FeatureCache> {
    let cache = pipeline::extract_features(corpus, &c.vocoder, &c.features, c.paths.cache.as_deref())?;
    for (p, e) in &cache.errors {
        eprintln!("warning: skipped {}: {e}", p.display());
    }
    Ok(cache)
}

fn domain_sets<'a>(corpus: &Corpus, cache: &'a FeatureCache, role: Role) -> (Vec<&'a FeatureSet>, Vec<&'a FeatureSet>) {
    let pick = |d: Domain| corpus.select(Some(role), Some(d)).into_iter().filter_map(|e| cache.features.get(&e.path)).collect();
    (pick(Domain::X), pick(Domain::Y))
}

fn cmd_extract(common: &Common, manifest_out: Option<PathBuf>) -> Result<()> {
    let c = config_of(common)?;
    let corpus = prepared_corpus(&c)?;
    let cache = features_for(&c, &corpus)?;
    let target = manifest_out.or_else(|| c.paths.reports.as_ref().map(|r| r.join("manifest.csv")));
    if let Some(t) = &target {
        if let Some(d) = t.parent() {
            fs::create_dir_all(d)?;
        }
        corpus.save_manifest(t)?;
    }
    let count = |r: Role| corpus.select(Some(r), None).len();
    println!(
        "{} entries ({} train, {} test), {} analyzed, {} from cache, {} failed",
        corpus.entries.len(),
        count(Role::Train),
        count(Role::Test),
        cache.features.len(),
        cache.cache_hits,
        cache.errors.len()
    );
    Ok(())
}

fn write_history(path: &Path, h: &cyclegan::TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "adv_g", "adv_d", "cycle", "identity", "total_g", "total_d", "secs"])?;
    for (i, (b, s)) in h.losses.iter().zip(&h.iteration_secs).enumerate() {
        w.write_record([
            i.to_string(),
            b.adv_g.to_string(),
            b.adv_d.to_string(),
            b.cycle.to_string(),
            b.identity.to_string(),
            b.total_g.to_string(),
            b.total_d.to_string(),
            format!("{s:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(common: &Common, out: Option<PathBuf>, checkpoint: Option<PathBuf>, iterations: Option<usize>) -> Result<()> {
    let mut c = config_of(common)?;
    if let Some(n) = iterations {
        c.train.iterations = n;
    }
    let out = out.or_else(|| c.paths.filter.clone()).ok_or_else(|| anyhow!("no output: pass --out or set paths.filter"))?;
    let corpus = prepared_corpus(&c)?;
    let cache = features_for(&c, &corpus)?;
    let (x, y) = domain_sets(&corpus, &cache, Role::Train);
    eprintln!("training on {} emotional / {} neutral utterances, {} iterations", x.len(), y.len(), c.train.iterations);
    let every = (c.train.iterations / 10).max(1);
    let fit = pipeline::fit_filter(&x, &y, &c.vocoder, &c.features, &c.arch, &c.train, |i, b| {
        if (i + 1) % every == 0 {
            eprintln!("iter {:>6}  G {:.4}  D {:.4}  cycle {:.4}", i + 1, b.total_g, b.total_d, b.cycle);
        }
    })?;
    cyclegan::save_filter(&fit.filter, &out)?;
    if let Some(ck) = checkpoint {
        cyclegan::write_checkpoint(&fit.model, fs::File::create(&ck).with_context(|| format!("creating {}", ck.display()))?)?;
    }
    if let Some(r) = &c.paths.reports {
        fs::create_dir_all(r)?;
        write_history(&r.join("train_history.csv"), &fit.history)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_freeze(common: &Common, checkpoint: &Path, out: &Path, f32: bool) -> Result<()> {
    let c = config_of(common)?;
    let model = cyclegan::read_checkpoint(fs::File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?)?;
    if model.arch.feature_dim != c.features.model_dim() {
        bail!("checkpoint width {} does not match the configured features ({})", model.arch.feature_dim, c.features.model_dim());
    }
    let corpus = prepared_corpus(&c)?;
    let cache = features_for(&c, &corpus)?;
    let (x, y) = domain_sets(&corpus, &cache, Role::Train);
    let st = pipeline::domain_stats(&x, &y)?;
    let mut f = cyclegan::freeze(&model, st.f0_src, st.f0_tgt, st.mcep_src, st.mcep_tgt, c.vocoder, c.features);
    if f32 {
        f = f.to_f32();
    }
    cyclegan::save_filter(&f, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

fn cmd_sanitize(filter: &Path, input: &Path, out: &Path) -> Result<()> {
    let f = cyclegan::load_filter(filter)?;
    if input.is_dir() {
        fs::create_dir_all(out)?;
        let files = wav_files(input)?;
        let results = pipeline::parallel_map(&files, |p| -> Result<()> {
            let w = pipeline::sanitize(&read_wav(p)?, &f)?;
            write_wav(out.join(p.file_name().expect("file")), &w)?;
            Ok(())
        });
        for (p, r) in files.iter().zip(results) {
            r.with_context(|| format!("sanitizing {}", p.display()))?;
        }
        println!("sanitized {} files into {}", files.len(), out.display());
    } else {
        let w = pipeline::sanitize(&read_wav(input).with_context(|| format!("reading {}", input.display()))?, &f)?;
        write_wav(out, &w)?;
    }
    Ok(())
}

fn read_transcripts(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            m.insert(stem, fs::read_to_string(&p)?);
        }
    }
    Ok(m)
}

fn cmd_evaluate(
    common: &Common,
    filter: &Path,
    references: Option<PathBuf>,
    hypotheses: &[(String, PathBuf)],
    out_dir: Option<PathBuf>,
) -> Result<()> {
    let c = config_of(common)?;
    let out_dir = out_dir.or_else(|| c.paths.reports.clone()).ok_or_else(|| anyhow!("no output: pass --out-dir or set paths.reports"))?;
    fs::create_dir_all(&out_dir)?;
    let f64_filter = cyclegan::load_filter(filter)?;
    let corpus = prepared_corpus(&c)?;
    let cache = features_for(&c, &corpus)?;

    let train: Vec<_> = corpus.select(Some(Role::Train), None).into_iter().filter(|e| cache.features.contains_key(&e.path)).collect();
    let xs: Vec<Vec<f64>> = train.iter().map(|e| evaluation::utterance_features(&cache.features[&e.path])).collect();
    let ys: Vec<_> = train.iter().map(|e| e.emotion).collect();
    let clf = evaluation::train_emotion_classifier(&xs, &ys, &c.classifier)?;

    let test: Vec<_> = corpus.select(Some(Role::Test), None).into_iter().filter(|e| cache.features.contains_key(&e.path)).collect();
    if test.is_empty() {
        bail!("test split is empty");
    }
    let refs = references.as_deref().map(read_transcripts).transpose()?;
    let hyps: BTreeMap<&str, BTreeMap<String, String>> =
        hypotheses.iter().map(|(p, d)| Ok((p.as_str(), read_transcripts(d)?))).collect::<Result<_>>()?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for platform in PLATFORMS {
        let filt = match platform {
            "raw" => None,
            "cloud" => Some(f64_filter.clone()),
            _ => Some(f64_filter.to_f32()),
        };
        let sanitized: Vec<Result<FeatureSet>> = pipeline::parallel_map(&test, |e| {
            let raw = &cache.features[&e.path];
            match &filt {
                None => Ok(raw.clone()),
                Some(f) => {
                    let w = pipeline::sanitize(&read_wav(&e.path)?, f)?;
                    Ok(FeatureSet::compute(&w, &c.vocoder, &c.features)?)
                }
            }
        });
        let mut items = Vec::with_capacity(test.len());
        for (e, s) in test.iter().zip(sanitized) {
            items.push(EvalItem {
                name: e.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
                speaker: e.actor_id,
                emotion: e.emotion,
                raw: cache.features[&e.path].clone(),
                sanitized: s.with_context(|| format!("{} on {platform}", e.path.display()))?,
            });
        }
        let tr = match (&refs, hyps.get(platform)) {
            (Some(r), Some(h)) => Some((r, h)),
            _ => None,
        };
        let rep = evaluation::evaluate_corpus(&items, tr, &clf, platform)?;
        evaluation::write_confusion_csv(&rep, fs::File::create(out_dir.join(format!("confusion-{platform}.csv")))?)?;
        evaluation::write_det_csv(&rep.scores, fs::File::create(out_dir.join(format!("det-{platform}.csv")))?)?;
        reports.push(rep);
    }
    evaluation::write_report_csv(&reports, fs::File::create(out_dir.join("report.csv"))?)?;
    for r in &reports {
        let wer = r.wer.map(|w| format!("{w:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<6} wer {wer:>7}  eer {:.4}  emotion accuracy {:.4}", r.platform, r.eer, r.emotion_accuracy);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    filter: Option<&Path>,
    input: &Path,
    mode: &str,
    runs: usize,
    sink: &str,
    out: &Path,
    meter: Option<&Path>,
    energy_out: Option<&Path>,
) -> Result<()> {
    let modes: Vec<Mode> = match mode {
        "both" => vec![Mode::Baseline, Mode::Filtered],
        m => vec![m.parse::<Mode>().map_err(|e| anyhow!(e))?],
    };
    let f = filter.map(cyclegan::load_filter).transpose()?;
    let sink = Sink::parse(sink);
    let mut reports = Vec::new();
    for m in modes {
        let r = bench::measure_overhead(input, f.as_ref(), m, runs, &sink)?;
        println!("{m:?}");
        for stage in r.stages().into_iter().chain([bench::STAGE_TOTAL]) {
            let s = r.summary(stage).expect("stage present");
            println!("  {stage:<11} median {:>9.3} ms  min {:>9.3}  max {:>9.3}", s.median, s.min, s.max);
        }
        reports.push(r);
    }
    if reports.len() == 1 {
        reports[0].write_csv(fs::File::create(out)?)?;
    } else {
        // one file per mode, suffixed
        for r in &reports {
            let tag = if r.mode == Mode::Baseline { "baseline" } else { "filtered" };
            r.write_csv(fs::File::create(with_suffix(out, tag))?)?;
        }
    }
    if let Some(mp) = meter {
        let samples = bench::read_meter_csv(fs::File::open(mp)?)?;
        let dest = energy_out.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, "energy"));
        let rows: Vec<_> = reports.iter().flat_map(|r| bench::attribute_energy(r, &samples)).collect();
        bench::write_energy_csv(&rows, fs::File::create(dest)?)?;
    }
    Ok(())
}

/// `a/b.csv` + `tag` → `a/b-tag.csv`
pub fn with_suffix(p: &Path, tag: &str) -> PathBuf {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = p.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    p.with_file_name(format!("{stem}-{tag}.{ext}"))
}

fn cmd_stats(input: &Path, out: Option<&Path>) -> Result<()> {
    let w = pipeline::load_for_analysis(input)?;
    let vc = sanitone_core::vocoder::VocoderConfig::default();
    let s = evaluation::spectrogram_stats(&w, &vc)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut wr = csv::Writer::from_writer(sink);
    wr.write_record(["frame", "time_s", "peak_amplitude", "intensity_db", "f0_hz"])?;
    for i in 0..s.f0_hz.len() {
        wr.write_record([
            i.to_string(),
            format!("{:.4}", i as f64 * vc.frame_period_ms / 1000.0),
            format!("{:.6}", s.peak_amplitude[i]),
            format!("{:.3}", s.intensity_db[i]),
            format!("{:.3}", s.f0_hz[i]),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
