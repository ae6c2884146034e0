#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use relm::data::{Dataset, Splits, SyntheticSpec};
use relm::embed::{EmbeddingModel, ModelDims, TrainConfig};
use relm::loss::{LossConfig, MarginSpec, Term};
use relm_cli::config::DataSource;

/// `n` items whose verb and noun classes are all distinct, so every pair
/// of different items has relevance 0. Features are one-hot with the text
/// side rotated by one position.
pub fn disjoint_dataset(n: usize) -> Dataset {
    let annotations = (0..n as u32)
        .map(|i| relm::relevance::CaptionAnnotation::new(format!("d{i:03}"), [i], [1000 + i]))
        .collect();
    let mut video = Array2::zeros((n, n));
    let mut text = Array2::zeros((n, n));
    for i in 0..n {
        video[[i, i]] = 1.0;
        text[[i, (i + 1) % n]] = 1.0;
    }
    Dataset::new(annotations, video, text, Splits::random(n, 5)).unwrap()
}

/// Maps item `i` of [`disjoint_dataset`] to basis vector `i` on both sides,
/// so s(v_i, q_j) is 1 when i == j and 0 otherwise.
pub fn matching_model(n: usize) -> EmbeddingModel {
    let mut model = EmbeddingModel::init(ModelDims { video_in: n, text_in: n, hidden: n, joint: n }, 0);
    for (k, block) in model.params_mut().into_iter().enumerate() {
        block.fill(0.0);
        // blocks: video W1, b1, W2, b2, then text W1, b1, W2, b2
        let shift = if k == 4 { 1 } else { 0 };
        if k % 2 == 0 {
            for i in 0..n {
                block[i * n + (i + shift) % n] = 1.0;
            }
        }
    }
    model
}

pub fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_verb_classes: 6,
        n_noun_classes: 14,
        n_items: 160,
        nouns_min: 1,
        nouns_max: 2,
        video_dim: 24,
        text_dim: 24,
        noise_sigma: 0.1,
        duplicate_rate: 0.3,
        class_skew: 1.0,
        seed: 4,
    }
}

pub fn small_source() -> DataSource {
    DataSource::Synthetic { spec: small_spec(), run_seed: false }
}

pub fn quick_config(margin: MarginSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 32,
        joint_dim: 8,
        per_example: 2,
        seed,
        loss: LossConfig::new([Term::CROSS_GLOBAL], margin).unwrap(),
        ..TrainConfig::default()
    }
}

/// Relative path -> bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Files that differ between two output trees, ignoring `config.json`
/// (it records the output directory).
pub fn tree_diff(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (ta, tb) = (tree(a), tree(b));
    let mut keys: Vec<&PathBuf> = ta.keys().chain(tb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| k.file_name().is_none_or(|n| n != "config.json"))
        .filter(|k| ta.get(*k) != tb.get(*k))
        .cloned()
        .collect()
}
