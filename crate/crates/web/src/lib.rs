//! WebAssembly bindings for the demo page in `www/`. Each export returns a
//! JSON string; the plain functions behind them are usable natively.

use relm::data::{generate_synthetic, SyntheticSpec};
use relm::loss::{Term, TermKind};
use relm::metrics::{average_precision_of_grades, dcg, ndcg_of_grades};
use relm::mining::{margin_histogram, mine_offline, Direction, MarginHistogram, NegativeConstraint};
use relm::relevance::{margin_for, pos_relevance, relevance, CaptionAnnotation, Level, Part};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, String> {
    s.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("{what}: `{t}` is not a valid entry")))
        .collect()
}

fn caption(id: &str, verbs: &str, nouns: &str) -> Result<CaptionAnnotation, String> {
    Ok(CaptionAnnotation::new(
        id,
        parse_list::<u32>("verbs", verbs)?,
        parse_list::<u32>("nouns", nouns)?,
    ))
}

/// Relevance of two captions given as class-id lists, with the margins a
/// relevance-based loss would use at each level.
pub fn compare_captions(verbs_a: &str, nouns_a: &str, verbs_b: &str, nouns_b: &str) -> Result<Value, String> {
    let a = caption("a", verbs_a, nouns_a)?;
    let b = caption("b", verbs_b, nouns_b)?;
    Ok(json!({
        "relevance": relevance(&a, &b).value(),
        "verb_relevance": pos_relevance(&a, &b, Part::Verb).value(),
        "noun_relevance": pos_relevance(&a, &b, Part::Noun).value(),
        "margin": {
            "global": margin_for(&a, &b, Level::Global).value(),
            "verb": margin_for(&a, &b, Level::Verb).value(),
            "noun": margin_for(&a, &b, Level::Noun).value(),
        },
    }))
}

/// nDCG and AP of a ranking given as relevance grades in rank order.
pub fn score_ranking(grades: &str) -> Result<Value, String> {
    let grades: Vec<f64> = parse_list("grades", grades)?;
    if let Some(g) = grades.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(format!("grade {g} outside [0, 1]"));
    }
    let n_r = grades.iter().filter(|&&g| g > 0.0).count();
    let mut ideal = grades.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    Ok(json!({
        "relevant": n_r,
        "dcg": dcg(&grades, n_r).map_err(|e| e.to_string())?,
        "idcg": dcg(&ideal, n_r).map_err(|e| e.to_string())?,
        "ndcg": ndcg_of_grades(&grades),
        "ap": average_precision_of_grades(&grades),
    }))
}

/// Margins of one round of offline mining on a small synthetic dataset.
pub fn mined_margins(items: usize, verbs: usize, nouns: usize, class_skew: f64, verb_differs: bool, seed: u64) -> Result<Value, String> {
    let spec = SyntheticSpec {
        n_verb_classes: verbs,
        n_noun_classes: nouns,
        n_items: items,
        video_dim: verbs + nouns,
        text_dim: verbs + nouns,
        class_skew,
        seed,
        ..SyntheticSpec::benchmark(seed)
    };
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let constraint = if verb_differs { NegativeConstraint::VerbClassDiffers } else { NegativeConstraint::None };
    let pool: Vec<usize> = (0..data.len()).collect();
    let term = Term { kind: TermKind::Cross, level: Level::Global };
    let mined = mine_offline(data.annotations(), &pool, 5, constraint, seed, &[term]).map_err(|e| e.to_string())?;
    let draws: Vec<_> = mined.triplets.into_iter().filter(|t| t.direction == Direction::CrossT2V).collect();
    let hist = margin_histogram(&draws, data.annotations(), Level::Global);
    Ok(json!({
        "bin_edges": MarginHistogram::bin_edges(),
        "counts": hist.counts,
        "total": hist.total(),
        "last_bin_fraction": hist.last_bin_fraction(),
        "skipped_anchors": mined.skipped_anchors,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareCaptions)]
pub fn compare_captions_js(verbs_a: &str, nouns_a: &str, verbs_b: &str, nouns_b: &str) -> Result<String, JsError> {
    to_js(compare_captions(verbs_a, nouns_a, verbs_b, nouns_b))
}

#[wasm_bindgen(js_name = scoreRanking)]
pub fn score_ranking_js(grades: &str) -> Result<String, JsError> {
    to_js(score_ranking(grades))
}

#[wasm_bindgen(js_name = minedMargins)]
pub fn mined_margins_js(items: usize, verbs: usize, nouns: usize, class_skew: f64, verb_differs: bool, seed: u64) -> Result<String, JsError> {
    to_js(mined_margins(items, verbs, nouns, class_skew, verb_differs, seed))
}
