//! Triplet construction: seeded offline sampling, in-batch hardest negatives,
//! and the distribution of relevance-based margins over a set of triplets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{Term, TermKind};
use crate::relevance::{jaccard, margin_for, CaptionAnnotation, Level};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "cross-t2v")]
    CrossT2V,
    #[serde(rename = "cross-v2t")]
    CrossV2T,
    #[serde(rename = "within-text")]
    WithinText,
    #[serde(rename = "within-video")]
    WithinVideo,
}

impl Direction {
    pub fn anchor_modality(self) -> Modality {
        match self {
            Direction::CrossT2V | Direction::WithinText => Modality::Text,
            Direction::CrossV2T | Direction::WithinVideo => Modality::Video,
        }
    }

    /// Modality of the positive and the negative.
    pub fn candidate_modality(self) -> Modality {
        match self {
            Direction::CrossV2T | Direction::WithinText => Modality::Text,
            Direction::CrossT2V | Direction::WithinVideo => Modality::Video,
        }
    }

    pub fn kind(self) -> TermKind {
        match self {
            Direction::CrossT2V | Direction::CrossV2T => TermKind::Cross,
            Direction::WithinText | Direction::WithinVideo => TermKind::Within,
        }
    }

    pub fn for_kind(kind: TermKind) -> [Direction; 2] {
        match kind {
            TermKind::Cross => [Direction::CrossT2V, Direction::CrossV2T],
            TermKind::Within => [Direction::WithinText, Direction::WithinVideo],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::CrossT2V => "cross-t2v",
            Direction::CrossV2T => "cross-v2t",
            Direction::WithinText => "within-text",
            Direction::WithinVideo => "within-video",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Direction::CrossT2V,
            Direction::CrossV2T,
            Direction::WithinText,
            Direction::WithinVideo,
        ]
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown direction `{s}`")))
    }
}

/// Anchor, positive and negative item indices. Which modality each index
/// refers to follows from `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub direction: Direction,
    pub level: Level,
}

impl Triplet {
    pub fn term(&self) -> Term {
        Term::new(self.direction.kind(), self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeConstraint {
    None,
    /// The negative shares no verb class with the anchor.
    VerbClassDiffers,
}

impl NegativeConstraint {
    fn admits(self, anchor: &CaptionAnnotation, candidate: &CaptionAnnotation) -> bool {
        match self {
            NegativeConstraint::None => true,
            NegativeConstraint::VerbClassDiffers => {
                let j = jaccard(anchor.verbs(), candidate.verbs());
                j.num == 0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mined {
    pub triplets: Vec<Triplet>,
    /// Anchors with no eligible negative.
    pub skipped_anchors: usize,
}

/// Items of `pool` whose annotation is identical to each member's, the
/// member itself excluded.
fn relevance_one_groups(annotations: &[CaptionAnnotation], pool: &[usize]) -> HashMap<usize, Vec<usize>> {
    let mut groups: HashMap<(&[crate::relevance::ClassId], &[crate::relevance::ClassId]), Vec<usize>> =
        HashMap::new();
    for &i in pool {
        let a = &annotations[i];
        groups.entry((a.verbs(), a.nouns())).or_default().push(i);
    }
    pool.iter()
        .map(|&i| {
            let a = &annotations[i];
            let peers = groups[&(a.verbs(), a.nouns())]
                .iter()
                .copied()
                .filter(|&j| j != i)
                .collect();
            (i, peers)
        })
        .collect()
}

/// Random offline mining over `pool`.
///
/// For every anchor, `per_example` negatives are drawn uniformly (with
/// replacement) from the pool items that are not the anchor's groundtruth
/// partner and satisfy `constraint`. Each draw becomes one triplet per
/// direction of each requested term: cross terms use the groundtruth partner
/// as positive, within terms a randomly chosen item with identical classes
/// (anchors without one are left out of within terms). Each anchor has its
/// own random stream, so the result does not depend on pool order.
pub fn mine_offline(
    annotations: &[CaptionAnnotation],
    pool: &[usize],
    per_example: usize,
    constraint: NegativeConstraint,
    seed: u64,
    terms: &[Term],
) -> Result<Mined> {
    if per_example == 0 {
        return Err(Error::invalid("per_example must be at least 1"));
    }
    if let Some(&bad) = pool.iter().find(|&&i| i >= annotations.len()) {
        return Err(Error::invalid(format!("pool item {bad} has no annotation")));
    }
    let mut sorted = pool.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let need_within = terms.iter().any(|t| t.kind == TermKind::Within);
    let peers = if need_within {
        relevance_one_groups(annotations, &sorted)
    } else {
        HashMap::new()
    };

    let mut out = Mined::default();
    let mut eligible = Vec::with_capacity(sorted.len());
    for &anchor in pool {
        let a = &annotations[anchor];
        let n_eligible = match constraint {
            // everything but the anchor itself: index around it instead of copying
            NegativeConstraint::None => sorted.len() - 1,
            _ => {
                eligible.clear();
                eligible.extend(
                    sorted
                        .iter()
                        .copied()
                        .filter(|&c| c != anchor && constraint.admits(a, &annotations[c])),
                );
                eligible.len()
            }
        };
        if n_eligible == 0 {
            out.skipped_anchors += 1;
            continue;
        }
        let anchor_pos = sorted.partition_point(|&c| c < anchor);
        let pick = |r: usize| match constraint {
            NegativeConstraint::None => sorted[if r >= anchor_pos { r + 1 } else { r }],
            _ => eligible[r],
        };
        let positives = peers.get(&anchor).map(Vec::as_slice).unwrap_or(&[]);
        let mut rng = seed::rng(seed, Purpose::Mining, 0, anchor as u64);
        for _ in 0..per_example {
            let negative = pick(rng.random_range(0..n_eligible));
            let within_positive =
                (need_within && !positives.is_empty()).then(|| positives[rng.random_range(0..positives.len())]);
            for term in terms {
                let positive = match term.kind {
                    TermKind::Cross => anchor,
                    TermKind::Within => match within_positive {
                        Some(p) => p,
                        None => continue,
                    },
                };
                for direction in Direction::for_kind(term.kind) {
                    out.triplets.push(Triplet {
                        anchor,
                        positive,
                        negative,
                        direction,
                        level: term.level,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// For each anchor row, the candidate row with the highest similarity that
/// `excluded` does not rule out; ties go to the lowest candidate index.
pub fn hardest_negatives<F>(
    anchors: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    excluded: F,
) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    let sims = anchors.dot(&candidates.t());
    sims.rows()
        .into_iter()
        .enumerate()
        .map(|(a, row)| {
            let mut best: Option<(usize, f64)> = None;
            for (c, &s) in row.iter().enumerate() {
                if excluded(a, c) {
                    continue;
                }
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect()
}

/// In-batch hardest-negative mining.
///
/// `batch` lists the dataset indices of the batch items, and row `i` of
/// `text` / `video` is the embedding of `batch[i]`. Cross terms pair each
/// anchor with its groundtruth partner; within terms use the lowest-index
/// batch item with identical classes as positive and skip anchors without
/// one. A batch of fewer than two items yields no triplets.
pub fn mine_online_hard(
    batch: &[usize],
    text: ArrayView2<f64>,
    video: ArrayView2<f64>,
    annotations: &[CaptionAnnotation],
    terms: &[Term],
) -> Vec<Triplet> {
    if batch.len() < 2 {
        return Vec::new();
    }
    let within_positive: Vec<Option<usize>> = batch
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            batch
                .iter()
                .enumerate()
                .find(|&(j, &b)| j != i && annotations[a].same_classes(&annotations[b]))
                .map(|(j, _)| j)
        })
        .collect();

    let mut out = Vec::new();
    for direction in [
        Direction::CrossT2V,
        Direction::CrossV2T,
        Direction::WithinText,
        Direction::WithinVideo,
    ] {
        let levels: Vec<Level> = terms
            .iter()
            .filter(|t| t.kind == direction.kind())
            .map(|t| t.level)
            .collect();
        if levels.is_empty() {
            continue;
        }
        let view = |m: Modality| match m {
            Modality::Text => text,
            Modality::Video => video,
        };
        let anchors = view(direction.anchor_modality());
        let candidates = view(direction.candidate_modality());
        let positive_of = |a: usize| match direction.kind() {
            TermKind::Cross => Some(a),
            TermKind::Within => within_positive[a],
        };
        let negatives = hardest_negatives(anchors, candidates, |a, c| {
            c == a || positive_of(a) == Some(c)
        });
        for (a, neg) in negatives.into_iter().enumerate() {
            let (Some(p), Some(n)) = (positive_of(a), neg) else {
                continue;
            };
            for &level in &levels {
                out.push(Triplet {
                    anchor: batch[a],
                    positive: batch[p],
                    negative: batch[n],
                    direction,
                    level,
                });
            }
        }
    }
    out
}

/// Counts of margins in ten bins of width 0.1: `[0, 0.1), ..., [0.8, 0.9)`
/// and the closed `[0.9, 1.0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub counts: [u64; 10],
}

impl MarginHistogram {
    pub const BINS: usize = 10;

    pub fn bin_edges() -> [f64; 11] {
        std::array::from_fn(|k| k as f64 / 10.0)
    }

    /// Margins are rationals with small denominators, so a tolerance far
    /// below any real gap puts exact boundaries like `1 - 0.1` in the upper bin.
    pub fn bin_of(margin: f64) -> usize {
        ((margin * 10.0 + 1e-9).floor().max(0.0) as usize).min(Self::BINS - 1)
    }

    pub fn add(&mut self, margin: f64) {
        self.counts[Self::bin_of(margin)] += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn last_bin_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.counts[Self::BINS - 1] as f64 / t as f64,
        }
    }

    /// `bin_lo,bin_hi,count` lines with a header.
    pub fn to_csv(&self) -> String {
        let edges = Self::bin_edges();
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{:.1},{:.1},{c}\n", edges[k], edges[k + 1]));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "bin_edges": Self::bin_edges(),
            "counts": self.counts,
        })
    }
}

/// Histogram of `margin_for(anchor, negative, level)` over the triplets.
pub fn margin_histogram(
    triplets: &[Triplet],
    annotations: &[CaptionAnnotation],
    level: Level,
) -> MarginHistogram {
    let mut h = MarginHistogram::default();
    for t in triplets {
        h.add(margin_for(&annotations[t.anchor], &annotations[t.negative], level).value());
    }
    h
}
