#![allow(dead_code)]

use ndarray::Array2;
use relm::data::{generate_synthetic, Dataset, Splits, SyntheticSpec};
use relm::relevance::CaptionAnnotation;

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_verb_classes: 4,
        n_noun_classes: 6,
        n_items: 40,
        nouns_min: 1,
        nouns_max: 2,
        video_dim: 12,
        text_dim: 12,
        noise_sigma: 0.1,
        duplicate_rate: 0.3,
        class_skew: 0.5,
        seed,
    }
}

pub fn small_dataset(seed: u64) -> Dataset {
    generate_synthetic(&small_spec(seed)).unwrap()
}

/// `n` items with pairwise disjoint verb and noun classes and one-hot
/// features, so every cross pair has relevance 0.
pub fn disjoint_dataset(n: usize, splits: Splits) -> Dataset {
    let annotations: Vec<CaptionAnnotation> = (0..n as u32)
        .map(|i| CaptionAnnotation::new(format!("x{i}"), [i], [100 + i]))
        .collect();
    let mut video = Array2::zeros((n, n));
    let mut text = Array2::zeros((n, n));
    for i in 0..n {
        video[[i, i]] = 1.0;
        text[[i, (i + 1) % n]] = 1.0;
    }
    Dataset::new(annotations, video, text, splits).unwrap()
}
