//! Feature-level emotion filtering for speech.
//!
//! The processing chain is: read a waveform, decompose it with the vocoder
//! into F0, spectral envelope and aperiodicity, code the envelope as
//! mel-cepstra, push the cepstra through a trained CycleGAN generator,
//! map F0 with a log-Gaussian transform, and resynthesize.
//!
//! Modules are ordered bottom-up:
//!
//! * [`audio`]: PCM16 WAV I/O and polyphase resampling.
//! * [`vocoder`]: F0 / envelope / aperiodicity analysis and synthesis.
//! * [`features`]: mel-cepstral coding, log-F0 statistics, normalization.
//! * [`nn`]: tensors, 1-D conv layers with exact backprop, Adam.
//! * [`cyclegan`]: emotion filter training and freezing, plus the `.eflt` container.
//! * [`pipeline`]: corpus handling, feature caching, end-to-end sanitization.
//! * [`evaluation`]: WER, EER, emotion classifier, speaker scoring, spectrogram stats.
//! * [`toy`]: synthetic voiced corpora with controllable speaker and style.

pub mod audio;
pub mod cyclegan;
pub mod dsp;
mod error;
pub mod evaluation;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod toy;
pub mod vocoder;

pub use error::{Error, Result};

/// Number of worker threads for corpus-level parallel work.
///
/// Honors `SANITONE_THREADS`; otherwise uses the available parallelism.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("SANITONE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => avail,
    }
}
