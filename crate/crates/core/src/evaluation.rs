//! Utility and privacy metrics: word error rate, equal error rate, an
//! utterance-level emotion classifier, a cepstral speaker scorer, and
//! per-frame amplitude / intensity / F0 contours.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::features::{sp_to_mcep, DEFAULT_ALPHA, DEFAULT_ORDER};
use crate::nn::{adam_step, AdamState, Layer, ModelParams, Tensor};
use crate::pipeline::{parallel_map, EmotionLabel, FeatureSet};
use crate::vocoder::{self, AnalysisResult, VocoderConfig};
use crate::{Error, Result};

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimum-edit alignment with unit costs; counts recovered by traceback.
pub fn edit_counts<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + (reference[i - 1].as_ref() != hypothesis[j - 1].as_ref()) as usize;
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = EditCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + (!same) as usize {
                c.substitutions += (!same) as usize;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

pub fn word_error_rate<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let c = edit_counts(reference, hypothesis);
    Ok(c.errors() as f64 / c.reference_len as f64)
}

/// [`word_error_rate`] on raw transcripts (tokenized and case-folded).
pub fn word_error_rate_text(reference: &str, hypothesis: &str) -> Result<f64> {
    word_error_rate(&tokenize(reference), &tokenize(hypothesis))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// (threshold, FAR, FRR) at every distinct score and above the maximum;
/// a trial is accepted when its score ≥ threshold.
pub fn det_points(s: &ScoreSet) -> Result<Vec<(f64, f64, f64)>> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut g = s.genuine.clone();
    let mut im = s.impostor.clone();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut th: Vec<f64> = g.iter().chain(&im).copied().collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let (mut gi, mut ii) = (0, 0);
    let mut pts = Vec::with_capacity(th.len() + 1);
    for &t in &th {
        while gi < g.len() && g[gi] < t {
            gi += 1;
        }
        while ii < im.len() && im[ii] < t {
            ii += 1;
        }
        pts.push((t, (im.len() - ii) as f64 / ni, gi as f64 / ng));
    }
    pts.push((f64::INFINITY, 0.0, 1.0));
    Ok(pts)
}

/// FAR where FAR − FRR crosses zero, interpolated linearly between the two
/// bracketing thresholds.
pub fn equal_error_rate(s: &ScoreSet) -> Result<f64> {
    let pts = det_points(s)?;
    for w in pts.windows(2) {
        let (_, far0, frr0) = w[0];
        let (_, far1, frr1) = w[1];
        let (d0, d1) = (far0 - frr0, far1 - frr1);
        if d0 == 0.0 {
            return Ok(far0);
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let t = d0 / (d0 - d1);
            return Ok(far0 + t * (far1 - far0));
        }
    }
    // FAR − FRR starts at ≥ 0 (threshold = min score) and ends at −1
    unreachable!("FAR - FRR must cross zero")
}

/// Fixed-length utterance description: per-coefficient mean and standard
/// deviation of the mel-cepstra, log-F0 mean and deviation, voiced fraction.
pub fn utterance_features(f: &FeatureSet) -> Vec<f64> {
    let m = &f.mcep;
    let w = m.width();
    let n = m.frames().max(1) as f64;
    let mut mean = vec![0.0; w];
    for r in &m.coeffs {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / n;
        }
    }
    let mut sd = vec![0.0; w];
    for r in &m.coeffs {
        for ((a, v), mu) in sd.iter_mut().zip(r).zip(&mean) {
            *a += (v - mu).powi(2) / n;
        }
    }
    let logs: Vec<f64> = f.analysis.f0.voiced().map(f64::ln).collect();
    let (lm, ls) = if logs.is_empty() {
        (0.0, 0.0)
    } else {
        let mu = logs.iter().sum::<f64>() / logs.len() as f64;
        (mu, (logs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / logs.len() as f64).sqrt())
    };
    let voiced = logs.len() as f64 / f.analysis.frames().max(1) as f64;
    mean.into_iter().chain(sd.into_iter().map(f64::sqrt)).chain([lm, ls, voiced]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 16, epochs: 400, learning_rate: 1e-2, seed: 0 }
    }
}

/// Linear → GLU → linear softmax over standardized feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionClassifier {
    pub labels: Vec<EmotionLabel>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub net: ModelParams,
}

fn softmax_columns(logits: &Tensor) -> Vec<Vec<f64>> {
    let (k, n) = (logits.shape[0], logits.shape[1]);
    (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..k).map(|c| logits.data[c * n + j]).collect();
            let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = col.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

impl EmotionClassifier {
    fn standardize(&self, x: &[Vec<f64>]) -> Result<Tensor> {
        let d = self.input_mean.len();
        let n = x.len();
        let mut data = vec![0.0; d * n];
        for (j, v) in x.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            for i in 0..d {
                data[i * n + j] = (v[i] - self.input_mean[i]) / self.input_std[i];
            }
        }
        Tensor::from_vec(&[d, n], data)
    }

    /// Class probabilities for each input vector.
    pub fn probabilities(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        Ok(softmax_columns(&self.net.forward(&self.standardize(x)?)?))
    }

    pub fn classify(&self, x: &[f64]) -> Result<(EmotionLabel, Vec<f64>)> {
        let p = self.probabilities(&[x.to_vec()])?.remove(0);
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("at least two classes");
        Ok((self.labels[best], p))
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[EmotionLabel]) -> Result<f64> {
        let mut hit = 0;
        for (v, l) in x.iter().zip(y) {
            hit += (self.classify(v)?.0 == *l) as usize;
        }
        Ok(hit as f64 / x.len().max(1) as f64)
    }
}

pub fn train_emotion_classifier(x: &[Vec<f64>], y: &[EmotionLabel], cfg: &ClassifierConfig) -> Result<EmotionClassifier> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let mut counts: BTreeMap<EmotionLabel, usize> = BTreeMap::new();
    for l in y {
        *counts.entry(*l).or_default() += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(Error::DegenerateTrainingSet(format!("class counts {counts:?}; need ≥ 2 classes with ≥ 2 examples")));
    }
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for v in x {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        mean.iter_mut().zip(v).for_each(|(a, b)| *a += b / n);
    }
    let mut sd = vec![0.0; d];
    for v in x {
        sd.iter_mut().zip(v).zip(&mean).for_each(|((a, b), m)| *a += (b - m).powi(2) / n);
    }
    // a feature constant over the training set carries nothing the net could
    // have learned; an infinite scale pins it to zero at inference too
    let sd = sd.into_iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { f64::INFINITY }).collect();
    let labels: Vec<EmotionLabel> = counts.keys().copied().collect();
    let k = labels.len();
    let h = cfg.hidden.max(1);
    let net = ModelParams::new(vec![Layer::linear("hidden", d, 2 * h), Layer::glu("glu"), Layer::linear("logits", h, k)]);
    let mut clf = EmotionClassifier { labels, input_mean: mean, input_std: sd, net };
    clf.net.init_glorot(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let xt = clf.standardize(x)?;
    let targets: Vec<usize> = y.iter().map(|l| clf.labels.binary_search(l).expect("label present")).collect();
    let mut state = AdamState::new(&clf.net);
    let nn = x.len();
    for _ in 0..cfg.epochs {
        let (logits, cache) = clf.net.forward_cached(&xt)?;
        let p = softmax_columns(&logits);
        // mean cross-entropy gradient
        let mut g = vec![0.0; k * nn];
        for (j, pj) in p.iter().enumerate() {
            for c in 0..k {
                g[c * nn + j] = (pj[c] - (c == targets[j]) as u8 as f64) / nn as f64;
            }
        }
        let (grads, _) = clf.net.backward(&cache, &Tensor { shape: vec![k, nn], data: g })?;
        adam_step(&mut clf.net, &grads, &mut state, cfg.learning_rate)?;
    }
    Ok(clf)
}

pub const MIN_VOICED_FOR_EMBEDDING: usize = 10;

/// Liftered mean mel-cepstrum (m·c_m for m ≥ 1) over voiced frames,
/// followed by half the mean log-F0 relative to 100 Hz.
///
/// The linear lifter de-emphasizes the low quefrencies that mostly track
/// vowel content and overall tilt.
pub fn speaker_embedding(a: &AnalysisResult) -> Result<Vec<f64>> {
    let voiced: Vec<usize> = (0..a.frames()).filter(|&i| a.f0.values_hz[i] > 0.0).collect();
    if voiced.len() < MIN_VOICED_FOR_EMBEDDING {
        return Err(Error::TooFewVoicedFrames(voiced.len()));
    }
    let sp: Vec<Vec<f64>> = voiced.iter().map(|&i| a.spectral_envelope[i].clone()).collect();
    let m = sp_to_mcep(&sp, DEFAULT_ORDER, DEFAULT_ALPHA)?;
    let n = voiced.len() as f64;
    let mut e = vec![0.0; DEFAULT_ORDER];
    for r in &m.coeffs {
        e.iter_mut().zip(&r[1..]).enumerate().for_each(|(m, (a, v))| *a += (m + 1) as f64 * v / n);
    }
    let lf0 = voiced.iter().map(|&i| (a.f0.values_hz[i] / 100.0).ln()).sum::<f64>() / n;
    e.push(0.5 * lf0);
    Ok(e)
}

/// Cosine similarity in [-1, 1].
pub fn speaker_score(e1: &[f64], e2: &[f64]) -> f64 {
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return 0.0;
    }
    (dot / (n1 * n2)).clamp(-1.0, 1.0)
}

pub const INTENSITY_REFERENCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectroStats {
    pub peak_amplitude: Vec<f64>,
    /// dB re [`INTENSITY_REFERENCE`], floored at 0 dB.
    pub intensity_db: Vec<f64>,
    pub f0_hz: Vec<f64>,
}

/// Per-frame peak, intensity and F0 on the vocoder's frame grid; each frame
/// covers one hop centered on its time.
pub fn spectrogram_stats(w: &Waveform, cfg: &VocoderConfig) -> Result<SpectroStats> {
    if w.is_empty() {
        return Err(Error::EmptySignal);
    }
    let f0 = vocoder::estimate_f0(w, cfg)?;
    let hop = cfg.hop(w.sample_rate_hz);
    let n = w.len() as isize;
    let mut peak = Vec::with_capacity(f0.len());
    let mut inten = Vec::with_capacity(f0.len());
    for i in 0..f0.len() {
        let c = i as f64 * hop;
        let lo = ((c - hop / 2.0).round() as isize).clamp(0, n);
        let hi = ((c + hop / 2.0).round() as isize).clamp(0, n).max((lo + 1).min(n));
        let seg = &w.samples[lo as usize..hi as usize];
        let p = seg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ms = if seg.is_empty() { 0.0 } else { seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64 };
        peak.push(p);
        inten.push(10.0 * (ms.max(INTENSITY_REFERENCE) / INTENSITY_REFERENCE).log10());
    }
    Ok(SpectroStats { peak_amplitude: peak, intensity_db: inten, f0_hz: f0.values_hz })
}

/// One utterance as seen before and after sanitization.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub name: String,
    pub speaker: u32,
    pub emotion: EmotionLabel,
    pub raw: FeatureSet,
    pub sanitized: FeatureSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub platform: String,
    pub wer: Option<f64>,
    pub eer: f64,
    pub emotion_accuracy: f64,
    pub labels: Vec<EmotionLabel>,
    /// rows = true label, columns = predicted, both in `labels` order
    pub confusion: Vec<Vec<usize>>,
    pub scores: ScoreSet,
}

/// Aggregate metrics over aligned raw/sanitized pairs.
///
/// `transcripts` maps utterance name to (reference, hypothesis); when
/// present every item needs both.
pub fn evaluate_corpus(
    items: &[EvalItem],
    transcripts: Option<(&BTreeMap<String, String>, &BTreeMap<String, String>)>,
    clf: &EmotionClassifier,
    platform: &str,
) -> Result<EvalReport> {
    let mut wer = None;
    if let Some((refs, hyps)) = transcripts {
        let (mut errs, mut len) = (0usize, 0usize);
        for it in items {
            let r = refs.get(&it.name).ok_or_else(|| Error::AlignmentError(format!("no reference transcript for {}", it.name)))?;
            let h = hyps.get(&it.name).ok_or_else(|| Error::AlignmentError(format!("no hypothesis transcript for {}", it.name)))?;
            let rt = tokenize(r);
            if rt.is_empty() {
                return Err(Error::EmptyReference);
            }
            let c = edit_counts(&rt, &tokenize(h));
            errs += c.errors();
            len += c.reference_len;
        }
        if len > 0 {
            wer = Some(errs as f64 / len as f64);
        }
    }

    let emb = parallel_map(items, |i| Ok((speaker_embedding(&i.raw.analysis)?, speaker_embedding(&i.sanitized.analysis)?)));
    let (raw_emb, san_emb): (Vec<Vec<f64>>, Vec<Vec<f64>>) = emb.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut scores = ScoreSet::default();
    for (i, a) in items.iter().enumerate() {
        scores.genuine.push(speaker_score(&raw_emb[i], &san_emb[i]));
        for (j, b) in items.iter().enumerate() {
            if a.speaker != b.speaker {
                scores.impostor.push(speaker_score(&raw_emb[i], &san_emb[j]));
            }
        }
    }
    let eer = equal_error_rate(&scores)?;

    let mut labels = clf.labels.clone();
    for it in items {
        if !labels.contains(&it.emotion) {
            labels.push(it.emotion);
        }
    }
    labels.sort();
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut hit = 0;
    for it in items {
        let (pred, _) = clf.classify(&utterance_features(&it.sanitized))?;
        let r = labels.binary_search(&it.emotion).expect("label present");
        let c = labels.binary_search(&pred).expect("label present");
        confusion[r][c] += 1;
        hit += (pred == it.emotion) as usize;
    }
    Ok(EvalReport {
        platform: platform.to_string(),
        wer,
        eer,
        emotion_accuracy: hit as f64 / items.len().max(1) as f64,
        labels,
        confusion,
        scores,
    })
}

/// `metric,platform,value` rows for several reports.
pub fn write_report_csv(reports: &[EvalReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "platform", "value"])?;
    for r in reports {
        if let Some(v) = r.wer {
            out.write_record(["wer", &r.platform, &v.to_string()])?;
        }
        out.write_record(["eer", &r.platform, &r.eer.to_string()])?;
        out.write_record(["emotion_accuracy", &r.platform, &r.emotion_accuracy.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Confusion matrix with a `true\predicted` corner cell.
pub fn write_confusion_csv(r: &EvalReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["true\\predicted".to_string()];
    head.extend(r.labels.iter().map(|l| l.name().to_string()));
    out.write_record(&head)?;
    for (l, row) in r.labels.iter().zip(&r.confusion) {
        let mut rec = vec![l.name().to_string()];
        rec.extend(row.iter().map(|c| c.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// FAR/FRR at every threshold, for external DET plotting.
pub fn write_det_csv(s: &ScoreSet, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "far", "frr"])?;
    for (t, far, frr) in det_points(s)? {
        out.write_record([t.to_string(), far.to_string(), frr.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
