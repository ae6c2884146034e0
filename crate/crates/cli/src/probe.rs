use std::collections::BTreeSet;
use std::fs;

use rand::seq::index::sample;
use relm::embed::EmbeddingModel;
use relm::loss::similarity;
use relm::relevance::CaptionAnnotation;
use relm::seed::probe_rng;
use serde::{Deserialize, Serialize};

use crate::config::{ProbeRun, RunConfig, SimilarRule};
use crate::error::{CliError, Result};
use crate::train::write_text;

pub const PROBE_JSON: &str = "probe.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean similarity to the query; absent when no item qualified.
    pub mean: Option<f64>,
    /// Items used, at most `k_similar`.
    pub count: usize,
    pub eligible: usize,
    pub ids: Vec<String>,
    pub similarities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub query: String,
    pub rule: SimilarRule,
    pub k_similar: usize,
    /// `s(v, q)` for the query's own video.
    pub groundtruth: f64,
    pub similar: Aggregate,
    pub dissimilar: Aggregate,
}

fn shares(a: &[relm::relevance::ClassId], b: &[relm::relevance::ClassId]) -> bool {
    let b: BTreeSet<_> = b.iter().collect();
    a.iter().any(|c| b.contains(c))
}

pub fn is_similar(rule: SimilarRule, query: &CaptionAnnotation, other: &CaptionAnnotation) -> bool {
    if query.same_classes(other) {
        return false;
    }
    let verb = shares(query.verbs(), other.verbs());
    let noun = shares(query.nouns(), other.nouns());
    match rule {
        SimilarRule::Either => verb || noun,
        SimilarRule::SameVerb => verb && query.nouns() != other.nouns(),
        SimilarRule::SameNoun => noun && query.verbs() != other.verbs(),
    }
}

/// No shared verb class and not containing the query's first noun class.
pub fn is_dissimilar(query: &CaptionAnnotation, other: &CaptionAnnotation) -> bool {
    let first_noun = query.nouns().first();
    !shares(query.verbs(), other.verbs()) && first_noun.is_none_or(|n| !other.nouns().contains(n))
}

pub fn run(cfg: &ProbeRun) -> Result<ProbeReport> {
    let dir = cfg.out.join(&cfg.run_id);
    RunConfig::Probe(cfg.clone()).write(&dir)?;
    if cfg.k_similar == 0 {
        return Err(CliError::Usage("k_similar must be at least 1".into()));
    }

    let dataset = cfg.data.load(cfg.seed)?;
    let bytes = fs::read(&cfg.checkpoint).map_err(|e| CliError::io(&cfg.checkpoint, e))?;
    let model = EmbeddingModel::read_checkpoint(bytes.as_slice())?;
    let q = dataset
        .index_of(&cfg.query)
        .ok_or_else(|| CliError::Usage(format!("query `{}` is not in the dataset", cfg.query)))?;
    let annotations = dataset.annotations();
    let query = &annotations[q];

    // candidates come from the split holding the query
    let splits = dataset.splits();
    let pool: &[usize] = [&splits.train, &splits.val, &splits.test]
        .into_iter()
        .find(|s| s.contains(&q))
        .map(Vec::as_slice)
        .unwrap_or(&[]);

    let text = model.encode_text(dataset.text_features().row(q).as_slice().expect("contiguous row"))?;
    let video_of = |i: usize| model.encode_video(dataset.video_features().row(i).as_slice().expect("contiguous row"));
    let groundtruth = similarity(&video_of(q)?, &text)?;

    let mut rng = probe_rng(cfg.seed, q as u64);
    let mut aggregate = |keep: &dyn Fn(&CaptionAnnotation) -> bool| -> Result<Aggregate> {
        let eligible: Vec<usize> = pool.iter().copied().filter(|&i| i != q && keep(&annotations[i])).collect();
        let take = cfg.k_similar.min(eligible.len());
        let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), take).into_iter().map(|k| eligible[k]).collect();
        picked.sort_unstable();
        let similarities = picked
            .iter()
            .map(|&i| similarity(&video_of(i)?, &text).map_err(CliError::from))
            .collect::<Result<Vec<f64>>>()?;
        let mean = (!similarities.is_empty()).then(|| similarities.iter().sum::<f64>() / similarities.len() as f64);
        Ok(Aggregate {
            mean,
            count: picked.len(),
            eligible: eligible.len(),
            ids: picked.iter().map(|&i| annotations[i].id.clone()).collect(),
            similarities,
        })
    };
    let similar = aggregate(&|o| is_similar(cfg.similar, query, o))?;
    let dissimilar = aggregate(&|o| is_dissimilar(query, o))?;

    let report = ProbeReport {
        query: cfg.query.clone(),
        rule: cfg.similar,
        k_similar: cfg.k_similar,
        groundtruth,
        similar,
        dissimilar,
    };
    write_text(&dir.join(PROBE_JSON), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(report)
}
