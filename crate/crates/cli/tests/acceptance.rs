//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are always printed.

mod support;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use relm::data::generate_synthetic;
use relm::embed::{grad_check, EmbeddingModel, ModelDims, TrainLog};
use relm::loss::{LossConfig, MarginSpec, Term};
use relm::metrics::{average_precision_of_grades, dcg, ndcg_of_grades};
use relm::mining::{margin_histogram, mine_offline, Direction, NegativeConstraint};
use relm::relevance::{margin_for, relevance, CaptionAnnotation, Level};
use relm::seed::probe_rng;
use relm_cli::config::{
    DataSource, GenRun, HistRun, HistSource, ProbeRun, RunConfig, SimilarRule, SweepRun, TrainRun,
};
use relm_cli::sweep::SweepReport;
use relm_cli::{execute, hist, train};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_annotation(rng: &mut impl Rng, id: usize) -> CaptionAnnotation {
    let verbs: Vec<u32> = (0..rng.random_range(0..=3)).map(|_| rng.random_range(0..6)).collect();
    let nouns: Vec<u32> = (0..rng.random_range(0..=4)).map(|_| rng.random_range(0..10)).collect();
    CaptionAnnotation::new(format!("r{id}"), verbs, nouns)
}

/// Integer set arithmetic: (|Vi|/|Vu| + |Ni|/|Nu|) / 2 as one fraction.
fn oracle_relevance(a: &CaptionAnnotation, b: &CaptionAnnotation) -> f64 {
    fn counts(x: &[relm::relevance::ClassId], y: &[relm::relevance::ClassId]) -> (u64, u64) {
        let x: HashSet<u32> = x.iter().map(|c| c.0).collect();
        let y: HashSet<u32> = y.iter().map(|c| c.0).collect();
        match (x.is_empty(), y.is_empty()) {
            (true, true) => (1, 1),
            (true, false) | (false, true) => (0, 1),
            _ => (x.intersection(&y).count() as u64, x.union(&y).count() as u64),
        }
    }
    let (vi, vu) = counts(a.verbs(), b.verbs());
    let (ni, nu) = counts(a.nouns(), b.nouns());
    (vi * nu + ni * vu) as f64 / (2 * vu * nu) as f64
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = probe_rng(101, 0);
    for k in 0..10_000 {
        let a = random_annotation(&mut rng, 2 * k);
        let b = random_annotation(&mut rng, 2 * k + 1);
        let r = relevance(&a, &b).value();
        let want = oracle_relevance(&a, &b);
        ensure(r == want, || format!("pair {k}: {r} vs oracle {want}"))?;
        ensure(r == relevance(&b, &a).value(), || format!("pair {k}: not symmetric"))?;
        ensure((0.0..=1.0).contains(&r), || format!("pair {k}: {r} outside [0, 1]"))?;
        ensure(relevance(&a, &a).value() == 1.0, || format!("pair {k}: self relevance below 1"))?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!("10000 pairs match the set-arithmetic oracle in {:.2}s", t.as_secs_f64()))
}

fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    (0..items.len())
        .flat_map(|i| {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            permutations(&rest).into_iter().map(move |mut p| {
                p.insert(0, head);
                p
            })
        })
        .collect()
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = probe_rng(102, 0);
    let mut pools = 0;
    while pools < 500 {
        let n = rng.random_range(1..=6);
        let grades: Vec<f64> = (0..n).map(|_| rng.random_range(0..=4) as f64 / 4.0).collect();
        let n_r = grades.iter().filter(|&&g| g > 0.0).count();
        if n_r == 0 {
            continue;
        }
        pools += 1;
        let mut ideal = grades.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(&ideal, n_r).map_err(|e| e.to_string())?;
        let mut best = f64::MIN;
        for p in permutations(&grades) {
            best = best.max(dcg(&p, n_r).map_err(|e| e.to_string())?);
            let v = ndcg_of_grades(&p).ok_or("query unexpectedly skipped")?;
            ensure((0.0..=1.0).contains(&v), || format!("nDCG {v} outside [0, 1] for {p:?}"))?;
        }
        ensure(best == idcg, || format!("IDCG {idcg} below brute-force max {best} for {grades:?}"))?;
    }
    let hand = ndcg_of_grades(&[0.5, 0.0, 1.0]).ok_or("hand case skipped")?;
    ensure((hand - 0.38010).abs() <= 1e-5, || format!("hand case nDCG {hand}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("500 pools, IDCG is the permutation max; hand case {hand:.5}; {:.2}s", t.as_secs_f64()))
}

fn criterion_3() -> Check {
    let mut rng = probe_rng(103, 0);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(1..=60);
        let grades: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        let relevant = grades.iter().filter(|&&g| g == 1.0).count();
        if relevant == 0 {
            ensure(average_precision_of_grades(&grades).is_none(), || "AP defined without relevant items".into())?;
            continue;
        }
        checked += 1;
        // AP = (1/|R|) * sum over relevant ranks k of P@k
        let mut sum = 0.0;
        for k in 0..n {
            if grades[k] == 1.0 {
                let p_at_k = grades[..=k].iter().filter(|&&g| g == 1.0).count() as f64 / (k + 1) as f64;
                sum += p_at_k;
            }
        }
        let want = sum / relevant as f64;
        let got = average_precision_of_grades(&grades).ok_or("AP missing")?;
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let case = average_precision_of_grades(&[1.0, 0.0, 1.0, 0.0]);
    ensure(case == Some(5.0 / 6.0), || format!("ranks 1 and 3 give {case:?}"))?;
    Ok(format!("500 rankings within {worst:.1e} of the scalar recomputation; ranks 1,3 give exactly 5/6"))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for instance in 0..20u64 {
        let spec = relm::data::SyntheticSpec { seed: instance, n_items: 40, video_dim: 24, text_dim: 20, ..support::small_spec() };
        let ds = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let pool: Vec<usize> = (0..10).map(|i| (i * 3 + instance as usize) % 40).collect();
        let mined = mine_offline(ds.annotations(), &pool, 2, NegativeConstraint::None, instance, &Term::all())
            .map_err(|e| e.to_string())?;
        let model = EmbeddingModel::init(ModelDims::new(24, 20, 6), instance);
        for margin in [MarginSpec::Relevance, MarginSpec::Fixed(0.1 * (instance % 15 + 1) as f64)] {
            let config = LossConfig::new(Term::all(), margin).map_err(|e| e.to_string())?;
            let err = grad_check(&model, &ds, &mined.triplets, &config, 1e-5, instance).map_err(|e| e.to_string())?;
            worst = worst.max(err);
        }
    }
    let t = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    ensure(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!("20 instances x 2 margin modes, all 6 terms: max relative error {worst:.1e}, {:.1}s", t.as_secs_f64()))
}

fn criterion_5(work: &Path) -> Check {
    let data = work.join("c5-data");
    support::disjoint_dataset(60).save(&data).map_err(|e| e.to_string())?;
    let run = |margin: MarginSpec, id: &str| {
        train::run(&TrainRun {
            run_id: id.into(),
            out: work.join("c5"),
            data: DataSource::Dir { path: data.clone() },
            train: support::quick_config(margin, 7),
            report_csv: None,
        })
        .map_err(|e| e.to_string())
    };
    let rel = run(MarginSpec::Relevance, "relevance")?;
    let fixed = run(MarginSpec::Fixed(1.0), "fixed")?;
    let read = |id: &str| std::fs::read(work.join("c5").join(id).join(train::TRAINLOG_FILE)).map_err(|e| e.to_string());
    let (a, b) = (read("relevance")?, read("fixed")?);
    ensure(a == b, || "train logs differ".into())?;
    ensure(rel.report() == fixed.report(), || "test reports differ".into())?;
    Ok(format!("relevance and fixed:1.0 logs are byte-identical ({} bytes)", a.len()))
}

fn criterion_6(work: &Path) -> Check {
    let ds = generate_synthetic(&relm::data::SyntheticSpec::benchmark(1)).map_err(|e| e.to_string())?;
    let mined = mine_offline(
        ds.annotations(),
        &ds.splits().train,
        5,
        NegativeConstraint::VerbClassDiffers,
        1,
        &Term::all(),
    )
    .map_err(|e| e.to_string())?;
    let anns = ds.annotations();
    for t in &mined.triplets {
        let r = relevance(&anns[t.anchor], &anns[t.negative]).value();
        ensure(r <= 0.5, || format!("triplet {t:?} has relevance {r}"))?;
        let m = margin_for(&anns[t.anchor], &anns[t.negative], Level::Global).value();
        ensure(m >= 0.5, || format!("triplet {t:?} has margin {m}"))?;
    }
    // the same through the hist command's triplet dump
    let cfg = HistRun {
        run_id: "c6".into(),
        out: work.to_path_buf(),
        source: HistSource::Mine {
            data: DataSource::benchmark(),
            seed: 1,
            per_example: 5,
            constraint: NegativeConstraint::VerbClassDiffers,
        },
        level: Level::Global,
    };
    hist::run(&cfg).map_err(|e| e.to_string())?;
    let dump = hist::read_triplets(&work.join("c6").join(hist::TRIPLETS_CSV)).map_err(|e| e.to_string())?;
    ensure(dump.iter().all(|r| r.margin >= 0.5), || "dumped margin below 0.5".into())?;
    Ok(format!("{} mined triplets and {} dumped ones all have relevance <= 0.5", mined.triplets.len(), dump.len()))
}

fn criterion_7(work: &Path) -> Check {
    let ds = generate_synthetic(&relm::data::SyntheticSpec::benchmark(1)).map_err(|e| e.to_string())?;
    let mined = mine_offline(ds.annotations(), &ds.splits().train, 5, NegativeConstraint::None, 1, &[Term::CROSS_GLOBAL])
        .map_err(|e| e.to_string())?;
    let draws: Vec<_> = mined.triplets.iter().copied().filter(|t| t.direction == Direction::CrossT2V).collect();
    let h = margin_histogram(&draws, ds.annotations(), Level::Global);
    ensure(h.total() == draws.len() as u64, || format!("{} counted for {} triplets", h.total(), draws.len()))?;

    // the training log accounts for every sampled negative too
    let cfg = TrainRun {
        run_id: "c7".into(),
        out: work.to_path_buf(),
        data: support::small_source(),
        train: support::quick_config(MarginSpec::Relevance, 3),
        report_csv: None,
    };
    train::run(&cfg).map_err(|e| e.to_string())?;
    let raw = std::fs::read_to_string(work.join("c7").join(train::TRAINLOG_FILE)).map_err(|e| e.to_string())?;
    let log = TrainLog::from_jsonl(&raw).map_err(|e| e.to_string())?;
    for e in &log.epochs {
        // cross-global yields one triplet per direction for each draw
        ensure(2 * e.margin_histogram.total() == e.triplets as u64, || format!("epoch {} miscounts", e.epoch))?;
    }

    let last = h.last_bin_fraction();
    ensure(last > 0.5, || format!("last bin holds {:.1}%", 100.0 * last))?;
    ensure(1.0 - last >= 0.10, || format!("only {:.1}% below the last bin", 100.0 * (1.0 - last)))?;
    Ok(format!(
        "{} benchmark draws: {:.1}% in [0.9, 1.0], {:.1}% below",
        h.total(),
        100.0 * last,
        100.0 * (1.0 - last)
    ))
}

fn criterion_8(work: &Path) -> Check {
    let frozen = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks/margin_sweep.json");
    let config = RunConfig::read(&frozen).map_err(|e| e.to_string())?.with_out(work.to_path_buf());
    let RunConfig::Sweep(sweep) = &config else {
        return Err("frozen benchmark is not a sweep".into());
    };
    let start = Instant::now();
    execute(&config).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let report = SweepReport::read(&work.join(&sweep.run_id)).map_err(|e| e.to_string())?;
    let expected_rows = (sweep.margins.len() + 1) * sweep.seeds.len();
    ensure(report.rows.len() == expected_rows, || format!("{} rows, expected {expected_rows}", report.rows.len()))?;

    let rel = report.setting("relevance").ok_or("no relevance rows")?;
    let default = report.setting("fixed:1.0").ok_or("no fixed:1.0 rows")?;
    let best = report
        .summary
        .iter()
        .filter(|s| s.setting.starts_with("fixed:"))
        .max_by(|a, b| a.ndcg_avg_mean.total_cmp(&b.ndcg_avg_mean))
        .ok_or("no fixed rows")?;
    let pts = |v: f64| 100.0 * v;
    let over_default = pts(rel.ndcg_avg_mean - default.ndcg_avg_mean);
    let vs_best = pts(rel.ndcg_avg_mean - best.ndcg_avg_mean);
    let r1_gap = pts((rel.r1_avg_mean - best.r1_avg_mean).abs());
    let detail = format!(
        "nDCG relevance {:.2} vs fixed:1.0 {:.2} ({over_default:+.2}) vs best {} {:.2} ({vs_best:+.2}); R@1 gap {r1_gap:.2}; {:.0}s",
        pts(rel.ndcg_avg_mean),
        pts(default.ndcg_avg_mean),
        best.setting,
        pts(best.ndcg_avg_mean),
        t.as_secs_f64()
    );
    ensure(over_default >= 0.5, || detail.clone())?;
    ensure(vs_best >= -0.5, || detail.clone())?;
    ensure(r1_gap <= 2.0, || detail.clone())?;
    ensure(t < Duration::from_secs(15 * 60), || detail.clone())?;
    Ok(detail)
}

fn criterion_9(work: &Path) -> Check {
    let first = work.join("first");
    let data = first.join("data");
    let n_probe = 24;
    let probe_data = work.join("probe-data");
    support::disjoint_dataset(n_probe).save(&probe_data).map_err(|e| e.to_string())?;
    let checkpoint = work.join("matching.bin");
    support::matching_model(n_probe)
        .write_checkpoint(std::fs::File::create(&checkpoint).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;

    let configs = vec![
        RunConfig::Gen(GenRun { spec: support::small_spec(), out: data.clone() }),
        RunConfig::Train(TrainRun {
            run_id: "train".into(),
            out: first.clone(),
            data: DataSource::Dir { path: data.clone() },
            train: support::quick_config(MarginSpec::Relevance, 2),
            report_csv: None,
        }),
        RunConfig::Sweep(SweepRun {
            run_id: "sweep".into(),
            out: first.clone(),
            data: support::small_source(),
            base: support::quick_config(MarginSpec::Relevance, 1),
            margins: vec![0.5, 1.0],
            seeds: vec![1, 2],
        }),
        RunConfig::Hist(HistRun {
            run_id: "hist".into(),
            out: first.clone(),
            source: HistSource::Mine {
                data: support::small_source(),
                seed: 3,
                per_example: 4,
                constraint: NegativeConstraint::None,
            },
            level: Level::Noun,
        }),
        RunConfig::Probe(ProbeRun {
            run_id: "probe".into(),
            out: first.clone(),
            checkpoint,
            data: DataSource::Dir { path: probe_data },
            seed: 1,
            query: "d003".into(),
            k_similar: 10,
            similar: SimilarRule::Either,
        }),
    ];
    for config in &configs {
        execute(config).map_err(|e| e.to_string())?;
    }
    let mut replayed = 0;
    for config in &configs {
        let dir = config.run_dir();
        let saved = RunConfig::read(&dir.join(relm_cli::config::CONFIG_FILE)).map_err(|e| e.to_string())?;
        ensure(&saved == config, || format!("{} does not hold the resolved config", dir.display()))?;
        let again = saved.clone().with_out(work.join(format!("again{replayed}")));
        execute(&again).map_err(|e| e.to_string())?;
        let diff = support::tree_diff(&dir, &again.run_dir());
        ensure(diff.is_empty(), || format!("{} differs on replay: {diff:?}", dir.display()))?;
        replayed += 1;
    }
    Ok(format!("gen, train, sweep, hist and probe replay bit-for-bit ({replayed} commands)"))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let dir = |name: &str| {
        let p = work.path().join(name);
        std::fs::create_dir_all(&p).expect("work dir");
        p
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("relevance oracle equivalence", Box::new(criterion_1)),
        ("nDCG maximality", Box::new(criterion_2)),
        ("AP oracle", Box::new(criterion_3)),
        ("gradient correctness", Box::new(criterion_4)),
        ("margin degeneracy", Box::new(move || criterion_5(&dir("5")))),
        ("constrained-mining bound", Box::new(move || criterion_6(&dir("6")))),
        ("histogram accounting", Box::new(move || criterion_7(&dir("7")))),
        ("directional margin sweep", Box::new(move || criterion_8(&dir("8")))),
        ("determinism", Box::new(move || criterion_9(&dir("9")))),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {}  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}  {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
