//! Datasets of annotated video/caption pairs: synthetic generation with a
//! controllable relevance structure, and file ingestion.
//!
//! On disk a dataset is four UTF-8 files: `annotations.jsonl`,
//! `video_features.csv`, `text_features.csv` and `splits.json`. Feature files
//! start with an `id,dim=<k>` line followed by one `id,v1,...,vk` row per item.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::CaptionAnnotation;
use crate::seed::{self, Purpose};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const VIDEO_FEATURES_FILE: &str = "video_features.csv";
pub const TEXT_FEATURES_FILE: &str = "text_features.csv";
pub const SPLITS_FILE: &str = "splits.json";

/// Train/validation/test item indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl Splits {
    /// 70/10/20 split of `n` items by seeded shuffle.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed, Purpose::Split, 0, 0));
        let n_train = (n as f64 * 0.7).round() as usize;
        let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..n_train + n_val].to_vec();
        let mut test = order[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

/// Annotated items with paired video and text features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    annotations: Vec<CaptionAnnotation>,
    video: Array2<f64>,
    text: Array2<f64>,
    splits: Splits,
}

impl Dataset {
    pub fn new(
        annotations: Vec<CaptionAnnotation>,
        video: Array2<f64>,
        text: Array2<f64>,
        splits: Splits,
    ) -> Result<Self> {
        let n = annotations.len();
        for (what, rows) in [("video features", video.nrows()), ("text features", text.nrows())] {
            if rows != n {
                return Err(Error::DimensionMismatch {
                    context: format!("{what} rows"),
                    expected: n,
                    actual: rows,
                });
            }
        }
        let mut ids = HashSet::with_capacity(n);
        for a in &annotations {
            if !ids.insert(a.id.as_str()) {
                return Err(Error::invalid(format!("duplicate item id `{}`", a.id)));
            }
        }
        let mut seen = vec![false; n];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n {
                return Err(Error::invalid(format!("split index {i} out of range for {n} items")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!(
                    "item `{}` appears in more than one split position",
                    annotations[i].id
                )));
            }
        }
        Ok(Self {
            annotations,
            video,
            text,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn annotations(&self) -> &[CaptionAnnotation] {
        &self.annotations
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn video_dim(&self) -> usize {
        self.video.ncols()
    }

    pub fn text_dim(&self) -> usize {
        self.text.ncols()
    }

    pub fn video_features(&self) -> &Array2<f64> {
        &self.video
    }

    pub fn text_features(&self) -> &Array2<f64> {
        &self.text
    }

    pub fn video_matrix(&self, items: &[usize]) -> Array2<f64> {
        self.video.select(Axis(0), items)
    }

    pub fn text_matrix(&self, items: &[usize]) -> Array2<f64> {
        self.text.select(Axis(0), items)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.annotations.iter().position(|a| a.id == id)
    }

    pub fn split_annotations(&self, split: &[usize]) -> Vec<CaptionAnnotation> {
        split.iter().map(|&i| self.annotations[i].clone()).collect()
    }

    /// Writes the four dataset files into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DatasetPaths::in_dir(dir);
        write_annotations(&paths.annotations, &self.annotations)?;
        let ids: Vec<&str> = self.annotations.iter().map(|a| a.id.as_str()).collect();
        write_features(&paths.video_features, &ids, &self.video)?;
        write_features(&paths.text_features, &ids, &self.text)?;
        let names = |s: &[usize]| s.iter().map(|&i| self.annotations[i].id.clone()).collect();
        let file = SplitsFile {
            train: names(&self.splits.train),
            val: names(&self.splits.val),
            test: names(&self.splits.test),
        };
        let mut json = serde_json::to_string_pretty(&file)?;
        json.push('\n');
        fs::write(&paths.splits, json).map_err(|e| Error::io(&paths.splits, e))
    }
}

/// Locations of the dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub video_features: PathBuf,
    pub text_features: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            annotations: dir.join(ANNOTATIONS_FILE),
            video_features: dir.join(VIDEO_FEATURES_FILE),
            text_features: dir.join(TEXT_FEATURES_FILE),
            splits: dir.join(SPLITS_FILE),
        }
    }
}

/// Loads and cross-validates a dataset. Without a splits file the items are
/// split 70/10/20 with `default_split_seed`.
pub fn load_dataset(
    annotations_path: &Path,
    video_features_path: &Path,
    text_features_path: &Path,
    splits_path: Option<&Path>,
    default_split_seed: u64,
) -> Result<Dataset> {
    let annotations = read_annotations(annotations_path)?;
    let index: HashMap<&str, usize> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();

    let align = |path: &Path| -> Result<Array2<f64>> {
        let (ids, rows) = read_features(path)?;
        let mut out = Array2::zeros((annotations.len(), rows.ncols()));
        let mut filled = vec![false; annotations.len()];
        for (r, id) in ids.iter().enumerate() {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::MissingId {
                id: id.clone(),
                path: annotations_path.to_path_buf(),
            })?;
            out.row_mut(i).assign(&rows.row(r));
            filled[i] = true;
        }
        if let Some(i) = filled.iter().position(|f| !f) {
            return Err(Error::MissingId {
                id: annotations[i].id.clone(),
                path: path.to_path_buf(),
            });
        }
        Ok(out)
    };
    let video = align(video_features_path)?;
    let text = align(text_features_path)?;

    let splits = match splits_path {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: SplitsFile = serde_json::from_str(&raw).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
            let resolve = |ids: Vec<String>| -> Result<Vec<usize>> {
                ids.into_iter()
                    .map(|id| {
                        index.get(id.as_str()).copied().ok_or_else(|| Error::MissingId {
                            id,
                            path: annotations_path.to_path_buf(),
                        })
                    })
                    .collect()
            };
            Splits {
                train: resolve(file.train)?,
                val: resolve(file.val)?,
                test: resolve(file.test)?,
            }
        }
        None => Splits::random(annotations.len(), default_split_seed),
    };
    Dataset::new(annotations, video, text, splits)
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let p = DatasetPaths::in_dir(dir);
    let splits = p.splits.exists().then_some(p.splits.as_path());
    load_dataset(&p.annotations, &p.video_features, &p.text_features, splits, 0)
}

pub fn read_annotations(path: &Path) -> Result<Vec<CaptionAnnotation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut ann: CaptionAnnotation =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if ann.normalize() {
            return Err(malformed(format!("duplicate class ids for `{}`", ann.id)));
        }
        if !ids.insert(ann.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", ann.id)));
        }
        out.push(ann);
    }
    if out.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: "no annotations".into(),
        });
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, annotations: &[CaptionAnnotation]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| malformed(1, "missing `id,dim=<k>` header".into()))?;
    let dim: usize = header
        .strip_prefix("id,dim=")
        .and_then(|k| k.trim().parse().ok())
        .ok_or_else(|| malformed(1, format!("bad header `{header}`, expected `id,dim=<k>`")))?;

    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let start = values.len();
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| malformed(line_no, format!("`{f}` is not a number (row `{id}`)")))?;
            values.push(v);
        }
        let got = values.len() - start;
        if got != dim {
            return Err(malformed(
                line_no,
                format!("row `{id}` has {got} values, expected dim {dim}"),
            ));
        }
        ids.push(id);
    }
    let rows = Array2::from_shape_vec((ids.len(), dim), values)
        .map_err(|e| malformed(0, e.to_string()))?;
    Ok((ids, rows))
}

pub fn write_features(path: &Path, ids: &[&str], rows: &Array2<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,dim={}", rows.ncols()).map_err(io)?;
    for (id, row) in ids.iter().zip(rows.rows()) {
        write!(w, "{id}").map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Optional `class_id,name` labels for reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: HashMap<u32, String>,
}

impl ClassVocabulary {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut names = HashMap::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || (n == 0 && line.starts_with("class_id")) {
                continue;
            }
            let (id, name) = line
                .split_once(',')
                .and_then(|(id, name)| Some((id.trim().parse::<u32>().ok()?, name.trim())))
                .ok_or_else(|| Error::Malformed {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("expected `class_id,name`, got `{line}`"),
                })?;
            names.insert(id, name.to_string());
        }
        Ok(Self { names })
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }
}

/// Parameters of a synthetic dataset.
///
/// Class frequencies follow a Zipf law with exponent `class_skew` (0 gives
/// uniform classes), which controls how often random pairs share a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_verb_classes: usize,
    pub n_noun_classes: usize,
    pub n_items: usize,
    pub nouns_min: usize,
    pub nouns_max: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    pub noise_sigma: f64,
    pub duplicate_rate: f64,
    pub class_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::benchmark(1)
    }
}

impl SyntheticSpec {
    /// The standard benchmark used for margin sweeps.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_verb_classes: 40,
            n_noun_classes: 120,
            n_items: 2000,
            nouns_min: 1,
            nouns_max: 3,
            video_dim: 256,
            text_dim: 256,
            noise_sigma: 0.1,
            duplicate_rate: 0.3,
            class_skew: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.n_verb_classes + self.n_noun_classes;
        if self.n_verb_classes == 0 || self.n_noun_classes == 0 || self.n_items == 0 {
            return Err(Error::invalid("class and item counts must be at least 1"));
        }
        if self.nouns_min == 0 || self.nouns_min > self.nouns_max || self.nouns_max > self.n_noun_classes {
            return Err(Error::invalid(format!(
                "nouns per item range {}..={} must be non-empty, start at 1 and fit {} noun classes",
                self.nouns_min, self.nouns_max, self.n_noun_classes
            )));
        }
        if self.video_dim < classes || self.text_dim < classes {
            return Err(Error::invalid(format!(
                "feature dims ({}, {}) must be at least the number of classes ({classes})",
                self.video_dim, self.text_dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.duplicate_rate) {
            return Err(Error::invalid("duplicate_rate must be in [0, 1)"));
        }
        if !(self.class_skew >= 0.0 && self.class_skew.is_finite()) {
            return Err(Error::invalid("class_skew must be finite and >= 0"));
        }
        Ok(())
    }
}

fn zipf(n: usize, skew: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|k| (k as f64).powf(-skew))).expect("positive weights")
}

/// Generates a dataset whose relevance structure is fully determined by the
/// emitted annotations.
///
/// Video features place a one-hot verb block and a unit-norm multi-hot noun
/// block at the start of the vector; text features scatter the same classes
/// over a seeded permutation of dimensions. Every dimension gets Gaussian
/// noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, Purpose::Generate, 0, 0);
    let verbs = zipf(spec.n_verb_classes, spec.class_skew);
    let nouns = zipf(spec.n_noun_classes, spec.class_skew);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let width = (spec.n_items.max(2) - 1).to_string().len();
    let mut classes: Vec<(u32, Vec<u32>)> = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        if i > 0 && rng.random::<f64>() < spec.duplicate_rate {
            let j = rng.random_range(0..i);
            classes.push(classes[j].clone());
            continue;
        }
        let verb = verbs.sample(&mut rng) as u32;
        let k = rng.random_range(spec.nouns_min..=spec.nouns_max);
        let mut item_nouns: Vec<u32> = Vec::with_capacity(k);
        while item_nouns.len() < k {
            let n = nouns.sample(&mut rng) as u32;
            if !item_nouns.contains(&n) {
                item_nouns.push(n);
            }
        }
        item_nouns.sort_unstable();
        classes.push((verb, item_nouns));
    }

    let n_classes = spec.n_verb_classes + spec.n_noun_classes;
    let mut text_layout: Vec<usize> = (0..spec.text_dim).collect();
    text_layout.shuffle(&mut rng);
    text_layout.truncate(n_classes);

    let mut video = Array2::zeros((spec.n_items, spec.video_dim));
    let mut text = Array2::zeros((spec.n_items, spec.text_dim));
    for (i, (verb, item_nouns)) in classes.iter().enumerate() {
        let noun_weight = 1.0 / (item_nouns.len() as f64).sqrt();
        let mut active = vec![(*verb as usize, 1.0)];
        active.extend(
            item_nouns
                .iter()
                .map(|&n| (spec.n_verb_classes + n as usize, noun_weight)),
        );
        for &(class, w) in &active {
            video[[i, class]] = w;
            text[[i, text_layout[class]]] = w;
        }
        for v in video.row_mut(i) {
            *v += noise.sample(&mut rng);
        }
        for v in text.row_mut(i) {
            *v += noise.sample(&mut rng);
        }
    }

    let annotations = classes
        .into_iter()
        .enumerate()
        .map(|(i, (verb, item_nouns))| {
            CaptionAnnotation::new(format!("item{i:0width$}"), [verb], item_nouns)
        })
        .collect();
    Dataset::new(annotations, video, text, Splits::random(spec.n_items, spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relevance::{relevance, relevance_matrix};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_verb_classes: 5,
            n_noun_classes: 8,
            n_items: 30,
            nouns_min: 1,
            nouns_max: 3,
            video_dim: 16,
            text_dim: 20,
            noise_sigma: 0.0,
            duplicate_rate: 0.0,
            class_skew: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn noise_free_layout_matches_annotations() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        for (i, a) in ds.annotations().iter().enumerate() {
            assert_eq!(a.verbs().len(), 1);
            assert!((1..=3).contains(&a.nouns().len()));
            let v = ds.video_features().row(i);
            assert_eq!(v[a.verbs()[0].0 as usize], 1.0);
            let nnz = v.iter().filter(|x| **x != 0.0).count();
            assert_eq!(nnz, 1 + a.nouns().len());
            let t = ds.text_features().row(i);
            assert_eq!(t.iter().filter(|x| **x != 0.0).count(), nnz);
            assert!((t.dot(&t) - 2.0).abs() < 1e-12);
        }
        let anns = ds.annotations();
        let m = relevance_matrix(anns, anns).unwrap();
        assert!(m.is_symmetric());
        assert_eq!(m.get(0, 1), relevance(&anns[0], &anns[1]).value());
    }

    #[test]
    fn duplicates_create_identical_groups() {
        let spec = SyntheticSpec {
            n_items: 100,
            duplicate_rate: 0.5,
            ..small_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let anns = ds.annotations();
        let reused = (1..anns.len())
            .filter(|&i| anns[..i].iter().any(|a| a.same_classes(&anns[i])))
            .count();
        // duplicates plus chance collisions in a small class space
        assert!((40..=80).contains(&reused), "{reused}");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small_spec();
        s.video_dim = 12;
        assert!(generate_synthetic(&s).is_err());
        let s = SyntheticSpec { n_items: 0, ..small_spec() };
        assert!(generate_synthetic(&s).is_err());
        let s = SyntheticSpec { duplicate_rate: 1.0, ..small_spec() };
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small_spec()).unwrap();
        let b = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 4, ..small_spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_proportions() {
        let s = Splits::random(2000, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1400, 200, 400));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..2000).collect::<Vec<_>>());
    }

    #[test]
    fn vocabulary_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("verbs.csv");
        fs::write(&p, "class_id,name\n0,take\n1,put\n").unwrap();
        let v = ClassVocabulary::read(&p).unwrap();
        assert_eq!(v.label(1), Some("put"));
        assert_eq!(v.label(2), None);
        fs::write(&p, "0;take\n").unwrap();
        assert!(ClassVocabulary::read(&p).is_err());
    }
}
