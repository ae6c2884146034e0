//! Rank-aware retrieval metrics with graded relevance.
//!
//! nDCG uses the graded relevance directly and truncates both DCG and IDCG
//! at `N_r`, the number of pool items with positive relevance. AP binarizes
//! relevance: an item counts as relevant only when its grade is exactly 1.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::relevance::RelevanceMatrix;

/// Discounted cumulative gain over the first `n_r` ranks (rank 1 has discount 1).
pub fn dcg(rel_of_rank: &[f64], n_r: usize) -> Result<f64> {
    if n_r > rel_of_rank.len() {
        return Err(Error::invalid(format!(
            "dcg cut-off {n_r} exceeds list length {}",
            rel_of_rank.len()
        )));
    }
    Ok(rel_of_rank[..n_r]
        .iter()
        .enumerate()
        .map(|(k, r)| r / ((k + 2) as f64).log2())
        .sum())
}

/// Ranks pool indices by descending score; ties go to the lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// A query's ranking over the evaluation pool, as indices into the
/// relevance matrix's item list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingList {
    pub query: usize,
    pub ranked: Vec<usize>,
}

impl RankingList {
    pub fn from_scores(query: usize, scores: &[f64]) -> Self {
        Self {
            query,
            ranked: rank_by_score(scores),
        }
    }

    pub fn position_of(&self, item: usize) -> Option<usize> {
        self.ranked.iter().position(|&i| i == item)
    }

    fn grades(&self, rel: &RelevanceMatrix) -> Result<Vec<f64>> {
        if self.ranked.len() != rel.n_items() {
            return Err(Error::DimensionMismatch {
                context: "ranking must cover the whole pool".into(),
                expected: rel.n_items(),
                actual: self.ranked.len(),
            });
        }
        let row = rel.row(self.query);
        Ok(self.ranked.iter().map(|&i| row[i]).collect())
    }
}

/// nDCG of a list of grades given in ranked order. `None` when no item has
/// positive relevance (the query is skipped).
pub fn ndcg_of_grades(ranked_grades: &[f64]) -> Option<f64> {
    let n_r = ranked_grades.iter().filter(|&&g| g > 0.0).count();
    if n_r == 0 {
        return None;
    }
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, n_r).ok()?;
    let got = dcg(ranked_grades, n_r).ok()?;
    Some(got / idcg)
}

pub fn ndcg(ranking: &RankingList, rel: &RelevanceMatrix) -> Result<Option<f64>> {
    Ok(ndcg_of_grades(&ranking.grades(rel)?))
}

/// Average precision of a list of grades in ranked order, treating only
/// grade 1 as relevant. `None` when nothing is relevant.
///
/// The precision sum is kept as an exact fraction while it fits, so the
/// result is the correctly rounded AP (e.g. exactly `5.0 / 6.0` for hits
/// at ranks 1 and 3); long lists fall back to a floating-point sum.
pub fn average_precision_of_grades(ranked_grades: &[f64]) -> Option<f64> {
    let mut hits = 0u128;
    let mut sum = 0.0;
    let mut exact = Some((0u128, 1u128));
    for (k, &g) in ranked_grades.iter().enumerate() {
        if g == 1.0 {
            hits += 1;
            let k = k as u128 + 1;
            sum += hits as f64 / k as f64;
            exact = exact.and_then(|(n, d)| add_fraction(n, d, hits, k));
        }
    }
    if hits == 0 {
        return None;
    }
    const EXACT_LIMIT: u128 = 1 << 53;
    match exact.and_then(|(n, d)| Some((n, d.checked_mul(hits)?))) {
        Some((n, d)) if n <= EXACT_LIMIT && d <= EXACT_LIMIT => Some(n as f64 / d as f64),
        _ => Some(sum / hits as f64),
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `n/d + p/q` in lowest terms, `None` on overflow.
fn add_fraction(n: u128, d: u128, p: u128, q: u128) -> Option<(u128, u128)> {
    let g = gcd(d, q);
    let den = (d / g).checked_mul(q)?;
    let num = n.checked_mul(q / g)?.checked_add(p.checked_mul(d / g)?)?;
    let r = gcd(num, den);
    Some((num / r, den / r))
}

pub fn average_precision(ranking: &RankingList, rel: &RelevanceMatrix) -> Result<Option<f64>> {
    Ok(average_precision_of_grades(&ranking.grades(rel)?))
}

/// Whether `groundtruth` is within the first `k` ranks.
pub fn recall_at_k(ranking: &RankingList, groundtruth: usize, k: usize) -> bool {
    ranking.ranked.iter().take(k).any(|&i| i == groundtruth)
}

/// Retrieval quality of a model on one split, both directions averaged.
///
/// Values are fractions in `[0, 1]`; human-readable output scales them by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ndcg_t2v: f64,
    pub ndcg_v2t: f64,
    pub ndcg_avg: f64,
    pub map_t2v: f64,
    pub map_v2t: f64,
    pub map_avg: f64,
    pub r1_avg: f64,
    pub r5_avg: f64,
    pub r10_avg: f64,
    pub skipped_queries: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "nDCG {:.1} (t2v {:.1}, v2t {:.1})  mAP {:.1} (t2v {:.1}, v2t {:.1})  R@1 {:.1}  R@5 {:.1}  R@10 {:.1}",
            100.0 * self.ndcg_avg,
            100.0 * self.ndcg_t2v,
            100.0 * self.ndcg_v2t,
            100.0 * self.map_avg,
            100.0 * self.map_t2v,
            100.0 * self.map_v2t,
            100.0 * self.r1_avg,
            100.0 * self.r5_avg,
            100.0 * self.r10_avg,
        )?;
        if self.skipped_queries > 0 {
            write!(f, "  ({} skipped)", self.skipped_queries)?;
        }
        Ok(())
    }
}

/// One row of the machine-readable report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub margin_mode: String,
    pub margin_value: Option<f64>,
    pub mining: String,
    pub loss_terms: String,
    pub seed: u64,
    pub ndcg_t2v: f64,
    pub ndcg_v2t: f64,
    pub ndcg_avg: f64,
    pub map_t2v: f64,
    pub map_v2t: f64,
    pub map_avg: f64,
    pub r1_avg: f64,
    pub r5_avg: f64,
    pub r10_avg: f64,
    pub skipped_queries: usize,
}

impl ReportRow {
    pub const HEADER: [&'static str; 16] = [
        "run_id",
        "margin_mode",
        "margin_value",
        "mining",
        "loss_terms",
        "seed",
        "ndcg_t2v",
        "ndcg_v2t",
        "ndcg_avg",
        "map_t2v",
        "map_v2t",
        "map_avg",
        "r1_avg",
        "r5_avg",
        "r10_avg",
        "skipped_queries",
    ];

    pub fn report(&self) -> EvalReport {
        EvalReport {
            ndcg_t2v: self.ndcg_t2v,
            ndcg_v2t: self.ndcg_v2t,
            ndcg_avg: self.ndcg_avg,
            map_t2v: self.map_t2v,
            map_v2t: self.map_v2t,
            map_avg: self.map_avg,
            r1_avg: self.r1_avg,
            r5_avg: self.r5_avg,
            r10_avg: self.r10_avg,
            skipped_queries: self.skipped_queries,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct DirectionTotals {
    ndcg: f64,
    ndcg_n: usize,
    ap: f64,
    ap_n: usize,
    r1: usize,
    r5: usize,
    r10: usize,
    queries: usize,
    skipped: usize,
}

impl DirectionTotals {
    fn mean_ndcg(&self) -> f64 {
        mean(self.ndcg, self.ndcg_n)
    }

    fn mean_ap(&self) -> f64 {
        mean(self.ap, self.ap_n)
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct QueryScores {
    ndcg: Option<f64>,
    ap: Option<f64>,
    rank_of_gt: usize,
}

fn score_query(scores: &[f64], grades: &[f64], groundtruth: usize) -> QueryScores {
    let ranking = rank_by_score(scores);
    let ranked_grades: Vec<f64> = ranking.iter().map(|&i| grades[i]).collect();
    QueryScores {
        ndcg: ndcg_of_grades(&ranked_grades),
        ap: average_precision_of_grades(&ranked_grades),
        rank_of_gt: ranking.iter().position(|&i| i == groundtruth).unwrap_or(usize::MAX),
    }
}

fn totals(per_query: &[QueryScores]) -> DirectionTotals {
    let mut t = DirectionTotals::default();
    for q in per_query {
        t.queries += 1;
        match q.ndcg {
            Some(v) => {
                t.ndcg += v;
                t.ndcg_n += 1;
            }
            None => t.skipped += 1,
        }
        match q.ap {
            Some(v) => {
                t.ap += v;
                t.ap_n += 1;
            }
            None => t.skipped += 1,
        }
        t.r1 += usize::from(q.rank_of_gt < 1);
        t.r5 += usize::from(q.rank_of_gt < 5);
        t.r10 += usize::from(q.rank_of_gt < 10);
    }
    t
}

fn map_rows<F>(n: usize, f: F) -> Vec<QueryScores>
where
    F: Fn(usize) -> QueryScores + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Metrics from a precomputed `text x video` similarity matrix where the
/// groundtruth partner of text `i` is video `i`.
pub fn evaluate_similarities(sims: &Array2<f64>, rel: &RelevanceMatrix) -> Result<EvalReport> {
    let n = sims.nrows();
    if n == 0 || sims.ncols() != n {
        return Err(Error::invalid(format!(
            "similarity matrix must be square and non-empty, got {}x{}",
            sims.nrows(),
            sims.ncols()
        )));
    }
    if rel.n_queries() != n || rel.n_items() != n {
        return Err(Error::DimensionMismatch {
            context: "relevance matrix vs evaluation pool".into(),
            expected: n,
            actual: rel.n_queries(),
        });
    }

    let t2v = map_rows(n, |q| {
        let scores = sims.row(q).to_vec();
        score_query(&scores, rel.row(q), q)
    });
    let v2t = map_rows(n, |q| {
        let scores = sims.column(q).to_vec();
        score_query(&scores, rel.row(q), q)
    });
    let (t2v, v2t) = (totals(&t2v), totals(&v2t));

    let recall = |k: fn(&DirectionTotals) -> usize| {
        0.5 * (k(&t2v) as f64 / t2v.queries as f64 + k(&v2t) as f64 / v2t.queries as f64)
    };
    let (ndcg_t2v, ndcg_v2t) = (t2v.mean_ndcg(), v2t.mean_ndcg());
    let (map_t2v, map_v2t) = (t2v.mean_ap(), v2t.mean_ap());
    Ok(EvalReport {
        ndcg_t2v,
        ndcg_v2t,
        ndcg_avg: 0.5 * (ndcg_t2v + ndcg_v2t),
        map_t2v,
        map_v2t,
        map_avg: 0.5 * (map_t2v + map_v2t),
        r1_avg: recall(|t| t.r1),
        r5_avg: recall(|t| t.r5),
        r10_avg: recall(|t| t.r10),
        skipped_queries: t2v.skipped + v2t.skipped,
    })
}

/// Encodes every item of `split` on both sides and scores text-to-video
/// and video-to-text retrieval. `rel` must be the split's relevance matrix
/// with queries and items in split order.
pub fn evaluate(
    model: &EmbeddingModel,
    dataset: &Dataset,
    split: &[usize],
    rel: &RelevanceMatrix,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let text = model.encode_text_batch(&dataset.text_matrix(split))?;
    let video = model.encode_video_batch(&dataset.video_matrix(split))?;
    evaluate_similarities(&text.dot(&video.t()), rel)
}
