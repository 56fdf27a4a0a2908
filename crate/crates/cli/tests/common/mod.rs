#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use sanitone_core::audio::write_wav;
use sanitone_core::pipeline::{ravdess_filename, EmotionLabel};
use sanitone_core::toy::{toy_corpus, Style, ToySpeaker};

/// Toy corpus laid out with RAVDESS file names: emotional style as angry,
/// neutral style as neutral, one actor per toy speaker.
pub fn write_toy_corpus(dir: &Path, per_style: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let items = toy_corpus(&ToySpeaker::roster(4), per_style, 16000, seed);
    let mut counter = std::collections::BTreeMap::new();
    for it in items {
        let emotion = if it.style == Style::Emotional { EmotionLabel::Angry } else { EmotionLabel::Neutral };
        let n = counter.entry((it.speaker, emotion)).or_insert(0u32);
        *n += 1;
        let intensity = if emotion == EmotionLabel::Neutral { 1 } else { 2 };
        let name = ravdess_filename(emotion, intensity, 1 + (*n - 1) % 2, 1 + (*n - 1) / 2, it.speaker as u32 + 1);
        write_wav(dir.join(name), &it.wave).unwrap();
    }
}

/// A small, fast configuration rooted at `root`.
pub fn write_config(root: &Path, iterations: usize) -> PathBuf {
    write_toy_corpus(&root.join("corpus"), 6, 5);
    let text = format!(
        "[arch]\ngen_hidden = 4\ngen_res_blocks = 1\ndisc_hidden = 4\ndisc_layers = 1\n\n\
         [train]\niterations = {iterations}\nidentity_cutoff_iter = 5\nsegment_frames = 32\n\n\
         [classifier]\nepochs = 50\n\n\
         [split]\ntrain_fraction = 0.5\n\n\
         [paths]\ncorpus = \"corpus\"\ncache = \"cache\"\nfilter = \"out/filter.eflt\"\nreports = \"reports\"\n"
    );
    let p = root.join("sanitone.toml");
    fs::write(&p, text).unwrap();
    fs::create_dir_all(root.join("out")).unwrap();
    p
}

pub fn run(args: &[&str]) -> i32 {
    sanitone_cli::run(std::iter::once("sanitone").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
