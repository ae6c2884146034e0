use ndarray::Array2;
use proptest::prelude::*;
use relm::metrics::{dcg, evaluate_similarities, ndcg_of_grades};
use relm::relevance::{relevance_matrix, CaptionAnnotation};

/// Ranks by descending score, ties by ascending index, with a plain
/// selection sort.
fn oracle_rank(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn oracle_ndcg(grades: &[f64]) -> Option<f64> {
    let n_r = grades.iter().filter(|&&g| g > 0.0).count();
    if n_r == 0 {
        return None;
    }
    let mut ideal = grades.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let d = |g: &[f64]| -> f64 { (0..n_r).map(|k| g[k] / ((k + 2) as f64).log2()).sum() };
    Some(d(grades) / d(&ideal))
}

fn oracle_ap(grades: &[f64]) -> Option<f64> {
    let total = grades.iter().filter(|&&g| g == 1.0).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (k, &g) in grades.iter().enumerate() {
        if g == 1.0 {
            hits += 1.0;
            sum += hits / (k + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn arb_pool() -> impl Strategy<Value = (Vec<CaptionAnnotation>, Vec<f64>)> {
    (
        prop::collection::vec((prop::collection::vec(0u32..3, 1..3), prop::collection::vec(0u32..4, 1..3)), 20),
        prop::collection::vec(-4i32..5, 400),
    )
        .prop_map(|(classes, sims)| {
            let anns = classes
                .into_iter()
                .enumerate()
                .map(|(i, (v, n))| CaptionAnnotation::new(format!("i{i}"), v, n))
                .collect();
            // coarse values so that ties are common
            (anns, sims.into_iter().map(|s| s as f64 / 4.0).collect())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_matches_scalar_oracle((anns, sims) in arb_pool()) {
        let n = anns.len();
        let sims = Array2::from_shape_vec((n, n), sims).unwrap();
        let rel = relevance_matrix(&anns, &anns).unwrap();
        let report = evaluate_similarities(&sims, &rel).unwrap();

        let mut ndcg = [Vec::new(), Vec::new()];
        let mut ap = [Vec::new(), Vec::new()];
        let mut recall = [[0usize; 3]; 2];
        let mut skipped = 0;
        for dir in 0..2 {
            for q in 0..n {
                let scores: Vec<f64> = (0..n).map(|j| if dir == 0 { sims[[q, j]] } else { sims[[j, q]] }).collect();
                let order = oracle_rank(&scores);
                let grades: Vec<f64> = order.iter().map(|&j| rel.get(q, j)).collect();
                match oracle_ndcg(&grades) {
                    Some(v) => ndcg[dir].push(v),
                    None => skipped += 1,
                }
                match oracle_ap(&grades) {
                    Some(v) => ap[dir].push(v),
                    None => skipped += 1,
                }
                let pos = order.iter().position(|&j| j == q).unwrap();
                for (slot, k) in [1, 5, 10].into_iter().enumerate() {
                    if pos < k {
                        recall[dir][slot] += 1;
                    }
                }
            }
        }
        // every item is its own perfect match, so no query is skipped here
        prop_assert_eq!(skipped, 0);
        prop_assert_eq!(report.skipped_queries, 0);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        prop_assert!(close(report.ndcg_t2v, mean(&ndcg[0])));
        prop_assert!(close(report.ndcg_v2t, mean(&ndcg[1])));
        prop_assert!(close(report.map_t2v, mean(&ap[0])));
        prop_assert!(close(report.map_v2t, mean(&ap[1])));
        prop_assert!(close(report.ndcg_avg, 0.5 * (mean(&ndcg[0]) + mean(&ndcg[1]))));
        for (slot, got) in [report.r1_avg, report.r5_avg, report.r10_avg].into_iter().enumerate() {
            let want = 0.5 * (recall[0][slot] + recall[1][slot]) as f64 / n as f64;
            prop_assert!(close(got, want));
        }
    }

    #[test]
    fn idcg_is_the_best_permutation(grades in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]), 1..7)) {
        let n_r = grades.iter().filter(|&&g| g > 0.0).count();
        prop_assume!(n_r > 0);
        let mut ideal = grades.clone();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idcg = dcg(&ideal, n_r).unwrap();
        let mut best = f64::MIN;
        for perm in permutations(&grades) {
            best = best.max(dcg(&perm, n_r).unwrap());
            let v = ndcg_of_grades(&perm).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((best - idcg).abs() <= 1e-12);
    }
}

fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

#[test]
fn skipped_queries_are_counted_not_scored() {
    // query b has no relevant item in either direction
    let rel = relm::relevance::RelevanceMatrix::from_grid(
        vec!["a".into(), "b".into()],
        vec!["a".into(), "b".into()],
        vec![1.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    let sims = Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.2, 0.8]).unwrap();
    let r = evaluate_similarities(&sims, &rel).unwrap();
    assert_eq!(r.skipped_queries, 4);
    assert_eq!(r.ndcg_t2v, 1.0);
    assert_eq!(r.r1_avg, 1.0);
}
