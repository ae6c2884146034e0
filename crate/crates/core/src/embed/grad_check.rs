use rand::seq::index::sample;

use super::{loss_and_gradient, EmbeddingModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::mining::Triplet;
use crate::seed::{self, Purpose};

/// Above this many weights only a seeded subsample is checked.
const FULL_CHECK_LIMIT: usize = 10_000;

/// `|a - b| / max(|a|, |b|, 1e-6)`. The floor keeps entries that are zero on
/// both sides (dead units, inactive triplets) from dividing round-off by ~0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the analytic parameter gradient and
/// central finite differences with step `eps`.
pub fn grad_check(
    model: &EmbeddingModel,
    dataset: &Dataset,
    triplets: &[Triplet],
    config: &LossConfig,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = loss_and_gradient(model, dataset, triplets, config)?;
    let analytic: Vec<f64> = analytic.params().concat();

    let n = analytic.len();
    let indices: Vec<usize> = if n > FULL_CHECK_LIMIT {
        let mut picked = sample(&mut seed::rng(seed, Purpose::GradCheck, 0, 0), n, FULL_CHECK_LIMIT).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in indices {
        let original = get(&probe, k);
        set(&mut probe, k, original + eps);
        let plus = loss_and_gradient(&probe, dataset, triplets, config)?.0.total;
        set(&mut probe, k, original - eps);
        let minus = loss_and_gradient(&probe, dataset, triplets, config)?.0.total;
        set(&mut probe, k, original);
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[k], numeric));
    }
    Ok(worst)
}

fn locate(model: &EmbeddingModel, mut k: usize) -> (usize, usize) {
    for (b, block) in model.params().iter().enumerate() {
        if k < block.len() {
            return (b, k);
        }
        k -= block.len();
    }
    panic!("parameter index out of range");
}

fn get(model: &EmbeddingModel, k: usize) -> f64 {
    let (b, i) = locate(model, k);
    model.params()[b][i]
}

fn set(model: &mut EmbeddingModel, k: usize, v: f64) {
    let (b, i) = locate(model, k);
    model.params_mut()[b][i] = v;
}
