use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, ModelDims};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{batch_loss, EmbeddingTable, LossConfig, LossValue, Term};
use crate::metrics::{evaluate, EvalReport};
use crate::mining::{
    margin_histogram, mine_offline, mine_online_hard, MarginHistogram, Modality,
    NegativeConstraint, Triplet,
};
use crate::relevance::{relevance_matrix, Level};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MiningMode {
    Offline(NegativeConstraint),
    OnlineHard,
}

impl fmt::Display for MiningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiningMode::Offline(NegativeConstraint::None) => "offline",
            MiningMode::Offline(NegativeConstraint::VerbClassDiffers) => "offline:verbdiff",
            MiningMode::OnlineHard => "online-hard",
        })
    }
}

impl FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(MiningMode::Offline(NegativeConstraint::None)),
            "offline:verbdiff" => Ok(MiningMode::Offline(NegativeConstraint::VerbClassDiffers)),
            "online-hard" => Ok(MiningMode::OnlineHard),
            other => Err(Error::invalid(format!(
                "mining `{other}`: expected offline, offline:verbdiff or online-hard"
            ))),
        }
    }
}

impl From<MiningMode> for String {
    fn from(m: MiningMode) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for MiningMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub joint_dim: usize,
    /// Defaults to `2 * joint_dim`.
    pub hidden_dim: Option<usize>,
    pub loss: LossConfig,
    pub mining: MiningMode,
    /// Offline mining only.
    pub per_example: usize,
    pub val_interval: usize,
    /// Validations without improvement before stopping early.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 1,
            joint_dim: 64,
            hidden_dim: None,
            loss: LossConfig::new([Term::CROSS_GLOBAL], crate::loss::MarginSpec::Relevance)
                .expect("valid default loss"),
            mining: MiningMode::Offline(NegativeConstraint::None),
            per_example: 5,
            val_interval: 1,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("joint_dim", self.joint_dim),
            ("per_example", self.per_example),
            ("val_interval", self.val_interval),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::invalid("hidden_dim must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn dims(&self, dataset: &Dataset) -> ModelDims {
        ModelDims {
            video_in: dataset.video_dim(),
            text_in: dataset.text_dim(),
            hidden: self.hidden_dim.unwrap_or(2 * self.joint_dim),
            joint: self.joint_dim,
        }
    }
}

/// One epoch of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    /// Mean over batches of each term's batch loss.
    pub loss_per_term: BTreeMap<Term, f64>,
    pub active_triplets: BTreeMap<Term, usize>,
    pub triplets: usize,
    /// Global-level margins of one triplet per sampled (anchor, negative).
    pub margin_histogram: MarginHistogram,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per epoch, LF-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let epochs = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { epochs })
    }

    /// Sum of the per-epoch margin histograms.
    pub fn margin_histogram(&self) -> MarginHistogram {
        let mut h = MarginHistogram::default();
        for e in &self.epochs {
            h.merge(&e.margin_histogram);
        }
        h
    }

    pub fn best_validation(&self) -> Option<(usize, EvalReport)> {
        let mut best: Option<(usize, EvalReport)> = None;
        for e in &self.epochs {
            if let Some(v) = e.validation {
                if best.is_none_or(|(_, b)| v.ndcg_avg > b.ndcg_avg) {
                    best = Some((e.epoch, v));
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation nDCG.
    pub model: EmbeddingModel,
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Loss of `model` on `triplets` and its gradient with respect to every
/// model parameter.
pub fn loss_and_gradient(
    model: &EmbeddingModel,
    dataset: &Dataset,
    triplets: &[Triplet],
    config: &LossConfig,
) -> Result<(LossValue, EmbeddingModel)> {
    let mut text_ids = BTreeSet::new();
    let mut video_ids = BTreeSet::new();
    for t in triplets {
        let (a, pn) = (t.direction.anchor_modality(), t.direction.candidate_modality());
        for (m, id) in [(a, t.anchor), (pn, t.positive), (pn, t.negative)] {
            if id >= dataset.len() {
                return Err(Error::invalid(format!("triplet item {id} out of range")));
            }
            match m {
                Modality::Text => text_ids.insert(id),
                Modality::Video => video_ids.insert(id),
            };
        }
    }
    let text_ids: Vec<usize> = text_ids.into_iter().collect();
    let video_ids: Vec<usize> = video_ids.into_iter().collect();
    let text_cache = model.text.forward(dataset.text_matrix(&text_ids), "text")?;
    let video_cache = model.video.forward(dataset.video_matrix(&video_ids), "video")?;
    let text = EmbeddingTable::new(text_ids, text_cache.output.clone())?;
    let video = EmbeddingTable::new(video_ids, video_cache.output.clone())?;

    let out = batch_loss(&text, &video, triplets, config, dataset.annotations())?;
    let mut grads = model.zeros_like();
    if !text.ids().is_empty() {
        model.text.backward(&text_cache, &out.text_grad, &mut grads.text);
    }
    if !video.ids().is_empty() {
        model.video.backward(&video_cache, &out.video_grad, &mut grads.video);
    }
    Ok((out.value, grads))
}

/// `v = momentum * v + g; w -= lr * v`.
fn sgd_step(model: &mut EmbeddingModel, velocity: &mut EmbeddingModel, grads: &EmbeddingModel, lr: f64, momentum: f64) {
    for ((w, v), g) in model
        .params_mut()
        .into_iter()
        .zip(velocity.params_mut())
        .zip(grads.params())
    {
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
    }
}

/// Triplets that stand for the sampled (anchor, negative) draws when
/// summarizing margins: each draw yields one triplet per direction and
/// level, so a single direction and level is kept.
fn draw_representatives(triplets: &[Triplet]) -> Vec<Triplet> {
    let Some(rep) = triplets.iter().map(|t| (t.direction, t.level)).min() else {
        return Vec::new();
    };
    triplets
        .iter()
        .filter(|t| (t.direction, t.level) == rep)
        .copied()
        .collect()
}

/// Trains the two towers with SGD and momentum, validating every
/// `val_interval` epochs (and at the last epoch) and keeping the weights
/// with the best validation nDCG. Deterministic given the config.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = dataset.splits();
    if splits.train.len() < 2 {
        return Err(Error::invalid("training split needs at least two items"));
    }
    if splits.val.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }

    let terms: Vec<Term> = config.loss.term_list();
    let annotations = dataset.annotations();
    let val_rel = relevance_matrix(&dataset.split_annotations(&splits.val), &dataset.split_annotations(&splits.val))?;

    let mut model = EmbeddingModel::init(config.dims(dataset), config.seed);
    let mut velocity = model.zeros_like();
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut stale = 0usize;
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        let mut order = splits.train.clone();
        order.shuffle(&mut seed::rng(config.seed, Purpose::Shuffle, epoch as u64, 0));

        let mut by_anchor: BTreeMap<usize, Vec<Triplet>> = BTreeMap::new();
        if let MiningMode::Offline(constraint) = config.mining {
            let mined = mine_offline(
                annotations,
                &splits.train,
                config.per_example,
                constraint,
                seed::derive(config.seed, Purpose::Mining, epoch as u64),
                &terms,
            )?;
            for t in mined.triplets {
                by_anchor.entry(t.anchor).or_default().push(t);
            }
        }

        let mut sums: BTreeMap<Term, f64> = terms.iter().map(|&t| (t, 0.0)).collect();
        let mut active: BTreeMap<Term, usize> = terms.iter().map(|&t| (t, 0)).collect();
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut n_triplets = 0usize;
        let mut histogram = MarginHistogram::default();

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let triplets: Vec<Triplet> = match config.mining {
                MiningMode::Offline(_) => chunk
                    .iter()
                    .flat_map(|a| by_anchor.get(a).into_iter().flatten().copied())
                    .collect(),
                MiningMode::OnlineHard => {
                    let text = model.encode_text_batch(&dataset.text_matrix(chunk))?;
                    let video = model.encode_video_batch(&dataset.video_matrix(chunk))?;
                    mine_online_hard(chunk, text.view(), video.view(), annotations, &terms)
                }
            };
            if triplets.is_empty() {
                continue;
            }
            histogram.merge(&margin_histogram(&draw_representatives(&triplets), annotations, Level::Global));

            let (value, grads) = loss_and_gradient(&model, dataset, &triplets, &config.loss)?;
            if !value.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    anchors: chunk.iter().map(|&i| annotations[i].id.clone()).collect(),
                });
            }
            for (t, v) in &value.per_term {
                *sums.get_mut(t).unwrap() += v;
            }
            for (t, n) in &value.active_triplets {
                *active.get_mut(t).unwrap() += n;
            }
            total += value.total;
            batches += 1;
            n_triplets += triplets.len();

            sgd_step(&mut model, &mut velocity, &grads, config.learning_rate, config.momentum);
        }

        let validate = epoch % config.val_interval == 0 || epoch == config.epochs;
        let validation = if validate {
            Some(evaluate(&model, dataset, &splits.val, &val_rel)?)
        } else {
            None
        };
        let denom = batches.max(1) as f64;
        log.epochs.push(EpochRecord {
            epoch,
            loss_total: total / denom,
            loss_per_term: sums.into_iter().map(|(t, s)| (t, s / denom)).collect(),
            active_triplets: active,
            triplets: n_triplets,
            margin_histogram: histogram,
            validation,
        });

        if let Some(report) = validation {
            if best.as_ref().is_none_or(|(score, _, _)| report.ndcg_avg > *score) {
                best = Some((report.ndcg_avg, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }

    let (_, best_epoch, model) = best.expect("the last epoch is always validated");
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}
