//! Graded relevance between annotated captions.
//!
//! Two captions are compared through the verb classes and noun classes they
//! mention. Each part contributes its intersection-over-union and the
//! relevance is the mean of the two. Everything is computed as an exact
//! integer ratio first so that "fully relevant" is an exact `1.0`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a verb or noun class vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

/// The verb and noun classes found in one caption.
///
/// Class lists are kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionAnnotation {
    pub id: String,
    verbs: Vec<ClassId>,
    nouns: Vec<ClassId>,
}

impl CaptionAnnotation {
    pub fn new(
        id: impl Into<String>,
        verbs: impl IntoIterator<Item = u32>,
        nouns: impl IntoIterator<Item = u32>,
    ) -> Self {
        Self {
            id: id.into(),
            verbs: class_set(verbs),
            nouns: class_set(nouns),
        }
    }

    pub fn verbs(&self) -> &[ClassId] {
        &self.verbs
    }

    pub fn nouns(&self) -> &[ClassId] {
        &self.nouns
    }

    pub fn classes(&self, part: Part) -> &[ClassId] {
        match part {
            Part::Verb => &self.verbs,
            Part::Noun => &self.nouns,
        }
    }

    /// Same class sets, ignoring the id.
    pub fn same_classes(&self, other: &Self) -> bool {
        self.verbs == other.verbs && self.nouns == other.nouns
    }

    /// True when the deserialized lists were not already sets.
    pub(crate) fn normalize(&mut self) -> bool {
        let before = (self.verbs.len(), self.nouns.len());
        self.verbs.sort_unstable();
        self.verbs.dedup();
        self.nouns.sort_unstable();
        self.nouns.dedup();
        before != (self.verbs.len(), self.nouns.len())
    }
}

fn class_set(ids: impl IntoIterator<Item = u32>) -> Vec<ClassId> {
    let mut v: Vec<ClassId> = ids.into_iter().map(ClassId).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Verb,
    Noun,
}

impl Part {
    pub fn opposite(self) -> Self {
        match self {
            Part::Verb => Part::Noun,
            Part::Noun => Part::Verb,
        }
    }
}

/// Whether relevance is computed over the whole caption or one part of speech.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Global,
    Verb,
    Noun,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Global, Level::Verb, Level::Noun];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Global => "global",
            Level::Verb => "verb",
            Level::Noun => "noun",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Level::Global),
            "verb" => Ok(Level::Verb),
            "noun" => Ok(Level::Noun),
            other => Err(Error::invalid(format!(
                "unknown level `{other}` (expected global, verb or noun)"
            ))),
        }
    }
}

/// A non-negative rational `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Relevance grade in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevanceScore(f64);

impl RelevanceScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Ratio> for RelevanceScore {
    fn from(r: Ratio) -> Self {
        RelevanceScore(r.to_f64())
    }
}

/// Intersection-over-union of two sorted class sets.
///
/// Two empty sets are identical (IoU 1); one empty set against a non-empty
/// one shares nothing (IoU 0).
pub fn jaccard(a: &[ClassId], b: &[ClassId]) -> Ratio {
    if a.is_empty() && b.is_empty() {
        return Ratio::ONE;
    }
    let (mut i, mut j, mut common) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = (a.len() + b.len()) as u64 - common;
    Ratio {
        num: common,
        den: union,
    }
}

/// Exact global relevance: the mean of the verb and noun IoUs.
pub fn relevance_ratio(a: &CaptionAnnotation, b: &CaptionAnnotation) -> Ratio {
    let v = jaccard(&a.verbs, &b.verbs);
    let n = jaccard(&a.nouns, &b.nouns);
    Ratio {
        num: v.num * n.den + n.num * v.den,
        den: 2 * v.den * n.den,
    }
}

/// Exact part-of-speech relevance: the other part's IoU is taken to be 1.
pub fn pos_relevance_ratio(a: &CaptionAnnotation, b: &CaptionAnnotation, part: Part) -> Ratio {
    let j = jaccard(a.classes(part), b.classes(part));
    Ratio {
        num: j.num + j.den,
        den: 2 * j.den,
    }
}

pub fn level_relevance_ratio(a: &CaptionAnnotation, b: &CaptionAnnotation, level: Level) -> Ratio {
    match level {
        Level::Global => relevance_ratio(a, b),
        Level::Verb => pos_relevance_ratio(a, b, Part::Verb),
        Level::Noun => pos_relevance_ratio(a, b, Part::Noun),
    }
}

pub fn relevance(a: &CaptionAnnotation, b: &CaptionAnnotation) -> RelevanceScore {
    relevance_ratio(a, b).into()
}

pub fn pos_relevance(a: &CaptionAnnotation, b: &CaptionAnnotation, part: Part) -> RelevanceScore {
    pos_relevance_ratio(a, b, part).into()
}

/// Margin for an (anchor, negative) pair: `1 - R(anchor, negative)`, the
/// groundtruth positive being maximally relevant.
pub fn margin_for(anchor: &CaptionAnnotation, negative: &CaptionAnnotation, level: Level) -> RelevanceScore {
    let rel = level_relevance_ratio(anchor, negative, level).to_f64();
    RelevanceScore(1.0 - rel)
}

/// Dense `queries x items` grid of global relevance grades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMatrix {
    queries: Vec<String>,
    items: Vec<String>,
    grid: Vec<f64>,
}

impl RelevanceMatrix {
    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn get(&self, query: usize, item: usize) -> f64 {
        self.grid[query * self.items.len() + item]
    }

    pub fn row(&self, query: usize) -> &[f64] {
        let n = self.items.len();
        &self.grid[query * n..(query + 1) * n]
    }

    /// Builds a matrix from precomputed grades (row-major).
    pub fn from_grid(queries: Vec<String>, items: Vec<String>, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != queries.len() * items.len() {
            return Err(Error::DimensionMismatch {
                context: "relevance grid".into(),
                expected: queries.len() * items.len(),
                actual: grid.len(),
            });
        }
        if let Some(bad) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::invalid(format!("relevance grade {bad} outside [0, 1]")));
        }
        Ok(Self { queries, items, grid })
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.items.len();
        self.queries == self.items
            && (0..n).all(|i| (0..n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

pub fn relevance_matrix(
    queries: &[CaptionAnnotation],
    items: &[CaptionAnnotation],
) -> Result<RelevanceMatrix> {
    if queries.is_empty() || items.is_empty() {
        return Err(Error::invalid("relevance matrix needs non-empty query and item lists"));
    }
    let row = |q: &CaptionAnnotation| -> Vec<f64> {
        items.iter().map(|it| relevance(q, it).value()).collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        queries.par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = queries.iter().map(row).collect();

    Ok(RelevanceMatrix {
        queries: queries.iter().map(|q| q.id.clone()).collect(),
        items: items.iter().map(|i| i.id.clone()).collect(),
        grid: rows.concat(),
    })
}
