mod common;

use relm::data::Splits;
use relm::embed::{train, EmbeddingModel, MiningMode, TrainConfig};
use relm::loss::{LossConfig, MarginSpec, Term};
use relm::metrics::evaluate;
use relm::mining::NegativeConstraint;
use relm::relevance::relevance_matrix;

fn config(margin: MarginSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 8,
        learning_rate: 0.1,
        seed,
        joint_dim: 6,
        per_example: 3,
        patience: 100,
        loss: LossConfig::new(Term::all(), margin).unwrap(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let ds = common::small_dataset(2);
    let cfg = TrainConfig { learning_rate: 0.0, ..config(MarginSpec::Relevance, 2) };
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.model, EmbeddingModel::init(cfg.dims(&ds), cfg.seed));
}

#[test]
fn separable_pairs_are_learned() {
    let splits = Splits { train: vec![0, 1, 2, 3], val: vec![4], test: vec![5] };
    let ds = common::disjoint_dataset(6, splits);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 4,
        learning_rate: 0.1,
        joint_dim: 4,
        per_example: 3,
        patience: 1000,
        val_interval: 50,
        loss: LossConfig::new([Term::CROSS_GLOBAL], MarginSpec::Fixed(0.2)).unwrap(),
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg).unwrap();
    let last = out.log.epochs.last().unwrap();
    assert!(last.loss_total < 1e-3, "{}", last.loss_total);

    let train_ids = &ds.splits().train;
    let anns = ds.split_annotations(train_ids);
    let rel = relevance_matrix(&anns, &anns).unwrap();
    // the kept model is the best on validation, so score the final weights
    // through a fresh run that stops at the last epoch
    let final_model = train(&ds, &TrainConfig { val_interval: 1000, ..cfg }).unwrap().model;
    let report = evaluate(&final_model, &ds, train_ids, &rel).unwrap();
    assert_eq!(report.r1_avg, 1.0);
}

#[test]
fn training_is_deterministic() {
    let ds = common::small_dataset(4);
    for mining in [MiningMode::Offline(NegativeConstraint::None), MiningMode::OnlineHard] {
        let cfg = TrainConfig { mining, ..config(MarginSpec::Relevance, 4) };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
        assert_eq!(a.model, b.model);
        assert_eq!(a.best_epoch, b.best_epoch);
    }
}

#[test]
fn relevance_margin_equals_unit_margin_without_shared_classes() {
    let splits = Splits { train: (0..12).collect(), val: vec![12, 13], test: vec![14, 15] };
    let ds = common::disjoint_dataset(16, splits);
    let run = |margin| {
        let cfg = TrainConfig {
            loss: LossConfig::new([Term::CROSS_GLOBAL], margin).unwrap(),
            ..config(MarginSpec::Relevance, 9)
        };
        train(&ds, &cfg).unwrap()
    };
    let rel = run(MarginSpec::Relevance);
    let fixed = run(MarginSpec::Fixed(1.0));
    assert_eq!(rel.log.to_jsonl().unwrap(), fixed.log.to_jsonl().unwrap());
    assert_eq!(rel.model, fixed.model);
}

#[test]
fn kept_model_is_the_best_validated_epoch() {
    let ds = common::small_dataset(5);
    let cfg = TrainConfig { epochs: 10, ..config(MarginSpec::Fixed(0.5), 5) };
    let out = train(&ds, &cfg).unwrap();
    let (best_epoch, best) = out.log.best_validation().unwrap();
    assert_eq!(best_epoch, out.best_epoch);
    for e in &out.log.epochs {
        assert!(e.validation.unwrap().ndcg_avg <= best.ndcg_avg);
    }
    let val = ds.split_annotations(&ds.splits().val);
    let rel = relevance_matrix(&val, &val).unwrap();
    assert_eq!(evaluate(&out.model, &ds, &ds.splits().val, &rel).unwrap(), best);
}

#[test]
fn patience_stops_early() {
    let ds = common::small_dataset(6);
    // a zero learning rate never improves on the first epoch
    let cfg = TrainConfig { epochs: 50, patience: 3, learning_rate: 0.0, ..config(MarginSpec::Relevance, 6) };
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.log.epochs.len(), 4);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn histogram_counts_match_logged_draws() {
    let ds = common::small_dataset(8);
    let cfg = TrainConfig {
        loss: LossConfig::new([Term::CROSS_GLOBAL], MarginSpec::Relevance).unwrap(),
        ..config(MarginSpec::Relevance, 8)
    };
    let out = train(&ds, &cfg).unwrap();
    for e in &out.log.epochs {
        // cross terms emit both directions per draw
        assert_eq!(2 * e.margin_histogram.total() as usize, e.triplets);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = common::small_dataset(1);
    let base = config(MarginSpec::Relevance, 1);
    for bad in [
        TrainConfig { epochs: 0, ..base.clone() },
        TrainConfig { batch_size: 0, ..base.clone() },
        TrainConfig { momentum: 1.0, ..base.clone() },
        TrainConfig { learning_rate: f64::NAN, ..base.clone() },
    ] {
        assert!(train(&ds, &bad).is_err());
    }
}
