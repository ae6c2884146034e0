//! Triplet hinge losses with fixed or relevance-based margins.
//!
//! A batch loss is a weighted sum of terms. Each term is the mean hinge over
//! the triplets tagged with it, where a term is a (cross-modal or
//! within-modal) direction family crossed with a relevance level.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::{Modality, Triplet};
use crate::relevance::{margin_for, CaptionAnnotation, Level};

/// Cosine similarity of two non-zero vectors of equal length.
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "similarity".into(),
            expected: u.len(),
            actual: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `max(0, margin + s_an - s_ap)`.
pub fn triplet_loss(s_ap: f64, s_an: f64, margin: f64) -> f64 {
    (margin + s_an - s_ap).max(0.0)
}

/// Triplet loss whose margin is `1 - R(anchor, negative)` at `level`.
pub fn relevance_triplet_loss(
    s_ap: f64,
    s_an: f64,
    anchor: &CaptionAnnotation,
    negative: &CaptionAnnotation,
    level: Level,
) -> f64 {
    triplet_loss(s_ap, s_an, margin_for(anchor, negative, level).value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MarginSpec {
    Fixed(f64),
    Relevance,
}

impl MarginSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            MarginSpec::Fixed(_) => "fixed",
            MarginSpec::Relevance => "relevance",
        }
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match *self {
            MarginSpec::Fixed(v) => Some(v),
            MarginSpec::Relevance => None,
        }
    }

    pub fn margin(&self, anchor: &CaptionAnnotation, negative: &CaptionAnnotation, level: Level) -> f64 {
        match *self {
            MarginSpec::Fixed(m) => m,
            MarginSpec::Relevance => margin_for(anchor, negative, level).value(),
        }
    }
}

impl fmt::Display for MarginSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginSpec::Fixed(v) => write!(f, "fixed:{v:?}"),
            MarginSpec::Relevance => f.write_str("relevance"),
        }
    }
}

impl FromStr for MarginSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "relevance" {
            return Ok(MarginSpec::Relevance);
        }
        let value = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("margin `{s}`: expected `fixed:<v>` or `relevance`")))?;
        if !(0.0..=1.5).contains(&value) {
            return Err(Error::invalid(format!("fixed margin {value} outside [0, 1.5]")));
        }
        Ok(MarginSpec::Fixed(value))
    }
}

impl From<MarginSpec> for String {
    fn from(m: MarginSpec) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for MarginSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Cross,
    Within,
}

/// One loss term, e.g. `cross-global` or `within-noun`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Term {
    pub kind: TermKind,
    pub level: Level,
}

impl Term {
    pub const fn new(kind: TermKind, level: Level) -> Self {
        Self { kind, level }
    }

    pub const CROSS_GLOBAL: Term = Term::new(TermKind::Cross, Level::Global);

    pub fn all() -> [Term; 6] {
        let mut out = [Term::CROSS_GLOBAL; 6];
        let mut k = 0;
        for kind in [TermKind::Cross, TermKind::Within] {
            for level in Level::ALL {
                out[k] = Term::new(kind, level);
                k += 1;
            }
        }
        out
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TermKind::Cross => "cross",
            TermKind::Within => "within",
        };
        write!(f, "{kind}-{}", self.level)
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, level) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("loss term `{s}`: expected <cross|within>-<level>")))?;
        let kind = match kind {
            "cross" => TermKind::Cross,
            "within" => TermKind::Within,
            other => return Err(Error::invalid(format!("loss term kind `{other}`"))),
        };
        Ok(Term::new(kind, level.parse()?))
    }
}

impl From<Term> for String {
    fn from(t: Term) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Which terms contribute to the loss, their weights, and the margin rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub terms: BTreeMap<Term, f64>,
    pub margin: MarginSpec,
}

impl LossConfig {
    /// Unit weight for every listed term.
    pub fn new(terms: impl IntoIterator<Item = Term>, margin: MarginSpec) -> Result<Self> {
        let cfg = Self {
            terms: terms.into_iter().map(|t| (t, 1.0)).collect(),
            margin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::invalid("loss needs at least one term"));
        }
        if let Some((t, w)) = self.terms.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("weight {w} for term {t} must be positive")));
        }
        if let MarginSpec::Fixed(m) = self.margin {
            if !(0.0..=1.5).contains(&m) {
                return Err(Error::invalid(format!("fixed margin {m} outside [0, 1.5]")));
            }
        }
        Ok(())
    }

    pub fn parse_terms(list: &str) -> Result<Vec<Term>> {
        list.split(',').map(|t| t.trim().parse()).collect()
    }

    /// `cross-global+cross-verb` style label for reports.
    pub fn terms_label(&self) -> String {
        self.terms.keys().map(Term::to_string).collect::<Vec<_>>().join("+")
    }

    pub fn term_list(&self) -> Vec<Term> {
        self.terms.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub per_term: BTreeMap<Term, f64>,
    pub active_triplets: BTreeMap<Term, usize>,
}

/// Embeddings for the items a batch touches, one table per modality.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    ids: Vec<usize>,
    rows: Array2<f64>,
    lookup: HashMap<usize, usize>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<usize>, rows: Array2<f64>) -> Result<Self> {
        if ids.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                context: "embedding table rows".into(),
                expected: ids.len(),
                actual: rows.nrows(),
            });
        }
        let lookup = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        Ok(Self { ids, rows, lookup })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    fn row_of(&self, id: usize) -> Result<usize> {
        self.lookup
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("triplet references item {id} with no embedding")))
    }
}

/// Loss and its gradient with respect to every embedding row.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub value: LossValue,
    pub text_grad: Array2<f64>,
    pub video_grad: Array2<f64>,
}

/// Mean hinge per term, weighted total, and exact subgradients with respect
/// to the (unit-norm) embeddings. A triplet with zero slack contributes a
/// zero subgradient.
pub fn batch_loss(
    text: &EmbeddingTable,
    video: &EmbeddingTable,
    triplets: &[Triplet],
    config: &LossConfig,
    annotations: &[CaptionAnnotation],
) -> Result<BatchLoss> {
    let mut counts: BTreeMap<Term, usize> = config.terms.keys().map(|&t| (t, 0)).collect();
    for tr in triplets {
        let term = tr.term();
        let slot = counts.get_mut(&term).ok_or_else(|| {
            Error::invalid(format!("triplet tagged {term} which is not a configured loss term"))
        })?;
        *slot += 1;
    }

    let mut sums: BTreeMap<Term, f64> = config.terms.keys().map(|&t| (t, 0.0)).collect();
    let mut active: BTreeMap<Term, usize> = config.terms.keys().map(|&t| (t, 0)).collect();
    let mut text_grad = Array2::zeros(text.rows.raw_dim());
    let mut video_grad = Array2::zeros(video.rows.raw_dim());

    for tr in triplets {
        let term = tr.term();
        let ann = |i: usize| {
            annotations
                .get(i)
                .ok_or_else(|| Error::invalid(format!("triplet item {i} has no annotation")))
        };
        let margin = config.margin.margin(ann(tr.anchor)?, ann(tr.negative)?, tr.level);

        let (a_mod, pn_mod) = (tr.direction.anchor_modality(), tr.direction.candidate_modality());
        let table = |m: Modality| match m {
            Modality::Text => text,
            Modality::Video => video,
        };
        let ra = table(a_mod).row_of(tr.anchor)?;
        let rp = table(pn_mod).row_of(tr.positive)?;
        let rn = table(pn_mod).row_of(tr.negative)?;
        let a = table(a_mod).rows.row(ra);
        let p = table(pn_mod).rows.row(rp);
        let n = table(pn_mod).rows.row(rn);

        let slack = margin + a.dot(&n) - a.dot(&p);
        if slack <= 0.0 {
            continue;
        }
        *sums.get_mut(&term).unwrap() += slack;
        *active.get_mut(&term).unwrap() += 1;

        let scale = config.terms[&term] / counts[&term] as f64;
        let grad_anchor: Array1<f64> = (&n - &p) * scale;
        let grad_pos: Array1<f64> = &a * (-scale);
        let grad_neg: Array1<f64> = &a * scale;
        let mut add = |m: Modality, row: usize, g: ArrayView1<f64>| {
            let grad = match m {
                Modality::Text => &mut text_grad,
                Modality::Video => &mut video_grad,
            };
            let mut r = grad.row_mut(row);
            r += &g;
        };
        add(a_mod, ra, grad_anchor.view());
        add(pn_mod, rp, grad_pos.view());
        add(pn_mod, rn, grad_neg.view());
    }

    let mut per_term = BTreeMap::new();
    let mut total = 0.0;
    for (&term, &sum) in &sums {
        let mean = if counts[&term] == 0 { 0.0 } else { sum / counts[&term] as f64 };
        total += config.terms[&term] * mean;
        per_term.insert(term, mean);
    }
    Ok(BatchLoss {
        value: LossValue {
            total,
            per_term,
            active_triplets: active,
        },
        text_grad,
        video_grad,
    })
}
