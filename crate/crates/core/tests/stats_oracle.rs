use std::path::PathBuf;

use causaltext_core::stats::agreement::stratified_permutation_p;
use causaltext_core::stats::anova::permutation_f_test;
use causaltext_core::stats::consensus::is_majority;
use causaltext_core::stats::{
    agreement, center_within_n, krippendorff_alpha, leave_one_out, majority_consensus, pearson, permutation_anova,
    AgreementOptions, AnovaFactor, Corpus, Metric, PermutationMode, RatingItem, RatingMatrix, ScoreRow, ScoreTable,
    StatsError, StratifiedObservation,
};
use proptest::prelude::*;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/transfer").join(name)
}

/// α from an explicit list of ordered pairable value pairs, built rater by
/// rater.
fn alpha_oracle(rm: &RatingMatrix) -> f64 {
    let mut pairs: Vec<(u8, u8, f64)> = Vec::new();
    for item in rm.items() {
        let vals: Vec<u8> = item.ratings.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    pairs.push((vals[a], vals[b], 1.0 / (m as f64 - 1.0)));
                }
            }
        }
    }
    let n: f64 = pairs.iter().map(|p| p.2).sum();
    let observed: f64 = pairs.iter().filter(|p| p.0 != p.1).map(|p| p.2).sum::<f64>() / n;
    let n1: f64 = pairs.iter().filter(|p| p.0 == 1).map(|p| p.2).sum();
    let n0 = n - n1;
    let expected = 2.0 * n0 * n1 / (n * (n - 1.0));
    if expected == 0.0 {
        1.0
    } else {
        1.0 - observed / expected
    }
}

fn matrix(raters: usize, rows: &[Vec<Option<u8>>]) -> RatingMatrix {
    let items = rows
        .iter()
        .enumerate()
        .map(|(k, r)| RatingItem {
            text_id: format!("t{}", k / 6),
            i: k % 3,
            j: (k % 3 + 1 + k / 3 % 2) % 3,
            ratings: r.clone(),
        })
        .collect();
    RatingMatrix::new(raters, items).unwrap()
}

#[test]
fn alpha_two_observer_textbook_case() {
    // Two observers, ten binary units; the coincidence matrix gives
    // o00 = 10, o01 = o10 = 4, o11 = 2, so alpha = 1 - 19 * 8 / (2 * 14 * 6).
    let a = [0, 1, 0, 0, 0, 0, 0, 0, 1, 0];
    let b = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0];
    let rows: Vec<Vec<Option<u8>>> = a.iter().zip(b).map(|(&x, y)| vec![Some(x), Some(y)]).collect();
    let rm = matrix(2, &rows);
    let expected = 1.0 - 19.0 * 8.0 / (2.0 * 14.0 * 6.0);
    assert!((krippendorff_alpha(&rm).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.095).abs() < 5e-4);
}

fn rating_rows() -> impl Strategy<Value = (usize, Vec<Vec<Option<u8>>>)> {
    (2usize..=11).prop_flat_map(|r| {
        let cell = prop_oneof![3 => (0u8..=1).prop_map(Some), 1 => Just(None)];
        (Just(r), proptest::collection::vec(proptest::collection::vec(cell, r), 1..30))
    })
}

proptest! {
    #[test]
    fn alpha_matches_pairwise_oracle((r, rows) in rating_rows()) {
        let rm = matrix(r, &rows);
        match krippendorff_alpha(&rm) {
            Ok(a) => prop_assert!((a - alpha_oracle(&rm)).abs() < 1e-9),
            Err(e) => {
                prop_assert_eq!(e, StatsError::InsufficientData);
                prop_assert!(rows.iter().all(|row| row.iter().flatten().count() < 2));
            }
        }
    }

    #[test]
    fn alpha_invariant_under_relabelling((r, rows) in rating_rows(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..r).collect();
        perm.shuffle(&mut rng);
        let mut shuffled: Vec<Vec<Option<u8>>> = rows.iter().map(|row| perm.iter().map(|&k| row[k]).collect()).collect();
        shuffled.reverse();
        let a = krippendorff_alpha(&matrix(r, &rows));
        let b = krippendorff_alpha(&matrix(r, &shuffled));
        match (a, b) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn single_vote_flip_changes_edge_only_across_majority(yes in 0usize..11) {
        let before = is_majority(yes, 11, 11);
        let after = is_majority(yes + 1, 11, 11);
        let crosses = yes < 6 && yes + 1 >= 6;
        prop_assert_eq!(before != after, crosses);
        let votes: Vec<Option<u8>> = (0..11).map(|k| Some(u8::from(k < yes))).collect();
        let rm = RatingMatrix::new(11, vec![RatingItem { text_id: "t".into(), i: 0, j: 1, ratings: votes }]).unwrap();
        prop_assert_eq!(majority_consensus(&rm).unwrap()[0].dag.has_edge(0, 1), yes >= 6);
    }

    #[test]
    fn centered_buckets_sum_to_zero(vals in proptest::collection::vec(-10.0f64..10.0, 48)) {
        let mut rows = Vec::new();
        let mut it = vals.into_iter();
        for a in ["a", "b", "c"] {
            for n in 3..=10u32 {
                for corpus in [Corpus::Generated, Corpus::Real] {
                    let v = it.next().unwrap();
                    rows.push(ScoreRow { algorithm: a.into(), n, corpus, f1: v, shd: v * 3.0, sid: -v, samples: None });
                }
            }
        }
        let c = center_within_n(&ScoreTable::new(rows)).unwrap();
        for m in &c.metrics {
            for b in m.generated.iter().chain(&m.real) {
                prop_assert!(b.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }
}

/// Pearson over pooled layouts for every joint within-bucket permutation,
/// computed from scratch.
fn brute_force_p(x: &[Vec<f64>], y: &[Vec<f64>]) -> (u64, u64) {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let flat_x: Vec<f64> = x.iter().flatten().copied().collect();
    let flat_y: Vec<f64> = y.iter().flatten().copied().collect();
    let observed = pearson(&flat_x, &flat_y).unwrap().abs();
    let per_bucket: Vec<Vec<Vec<usize>>> = x.iter().map(|b| perms(b.len())).collect();
    let mut idx = vec![0usize; x.len()];
    let (mut hits, mut total) = (0, 0);
    loop {
        let py: Vec<f64> = (0..x.len()).flat_map(|b| per_bucket[b][idx[b]].iter().map(move |&k| y[b][k])).collect();
        total += 1;
        hits += u64::from(pearson(&flat_x, &py).unwrap().abs() >= observed - 1e-12);
        let mut b = 0;
        loop {
            if b == x.len() {
                return (hits, total);
            }
            idx[b] += 1;
            if idx[b] < per_bucket[b].len() {
                break;
            }
            idx[b] = 0;
            b += 1;
        }
    }
}

fn random_layout(seed: u64, buckets: usize, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use rand::Rng;
    let mut rng = causaltext_core::rng::stream(seed, 9);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..buckets {
        let xb: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yb: Vec<f64> = xb.iter().map(|v| 0.3 * v + rng.gen_range(-1.0..1.0)).collect();
        x.push(xb);
        y.push(yb);
    }
    (x, y)
}

#[test]
fn exhaustive_permutation_matches_brute_force() {
    for seed in 0..5 {
        let (x, y) = random_layout(seed, 3, 3);
        let p = stratified_permutation_p(&x, &y, PermutationMode::Exhaustive, 0, 1_000_000, 0).unwrap();
        let (hits, total) = brute_force_p(&x, &y);
        assert_eq!((p.exceedances, p.permutations), (hits, total));
        assert!(p.exhaustive);
    }
}

#[test]
fn sampled_permutation_converges_to_exhaustive() {
    let b = 10_000;
    for seed in 0..4 {
        let (x, y) = random_layout(100 + seed, 4, 3);
        let exact = stratified_permutation_p(&x, &y, PermutationMode::Exhaustive, 0, 1_000_000, 0).unwrap().value;
        let sampled = stratified_permutation_p(&x, &y, PermutationMode::Sampled, b, 0, seed).unwrap().value;
        let se = (exact * (1.0 - exact) / b as f64).sqrt();
        assert!((sampled - exact).abs() <= 3.0 * se + 1.0 / (b as f64 + 1.0), "exact {exact}, sampled {sampled}");
    }
}

#[test]
fn exhaustive_cap_is_enforced() {
    let (x, y) = random_layout(1, 4, 3);
    let err = stratified_permutation_p(&x, &y, PermutationMode::Exhaustive, 0, 100, 0).unwrap_err();
    assert_eq!(err, StatsError::ExhaustiveTooLarge { combinations: 1296, cap: 100 });
    let auto = stratified_permutation_p(&x, &y, PermutationMode::Auto, 500, 100, 0).unwrap();
    assert!(!auto.exhaustive);
}

#[test]
fn zero_exceedances_give_resolution_floor() {
    // A perfectly aligned layout where every non-identity shuffle lowers |r|.
    let x = vec![vec![-1.0, 0.0, 1.0]; 8];
    let y = vec![vec![-2.0, 0.1, 1.9]; 8];
    let p = stratified_permutation_p(&x, &y, PermutationMode::Sampled, 10_000, 0, 3).unwrap();
    // The identity and the full reversal (|r| equal) are the only ties; with
    // 6^8 joint orders the sample almost never hits them.
    assert!(p.exceedances <= 1);
    if p.exceedances == 0 {
        assert_eq!(p.value, 1.0 / 10_001.0);
    }
}

fn linear_table() -> ScoreTable {
    let mut rows = Vec::new();
    for (k, a) in ["a", "b", "c", "d"].iter().enumerate() {
        for n in 3..=10u32 {
            let g = 0.1 * k as f64 + 0.01 * n as f64 * (k as f64 + 1.0);
            let r = 2.0 * g + 0.5;
            rows.push(ScoreRow {
                algorithm: a.to_string(),
                n,
                corpus: Corpus::Generated,
                f1: g,
                shd: g,
                sid: g,
                samples: None,
            });
            rows.push(ScoreRow {
                algorithm: a.to_string(),
                n,
                corpus: Corpus::Real,
                f1: r,
                shd: r,
                sid: r,
                samples: None,
            });
        }
    }
    ScoreTable::new(rows)
}

#[test]
fn perfectly_linear_pairs() {
    let mut opts = AgreementOptions::new(5);
    opts.permutations = 500;
    opts.bootstrap = 500;
    let s = agreement(&linear_table(), &opts).unwrap();
    for m in &s.metrics {
        assert!((m.pearson - 1.0).abs() < 1e-9);
        assert!((m.r_squared - 1.0).abs() < 1e-9);
        let ci = m.bootstrap.as_ref().unwrap().r_squared;
        assert!((ci[0] - 1.0).abs() < 1e-9 && (ci[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn bootstrap_width_does_not_move_point_estimate() {
    let table = ScoreTable::from_csv_path(data("gpt5.csv")).unwrap();
    let mut small = AgreementOptions::new(1);
    small.permutations = 0;
    small.bootstrap = 200;
    let mut large = small.clone();
    large.bootstrap = 4_000;
    let a = agreement(&table, &small).unwrap();
    let b = agreement(&table, &large).unwrap();
    for m in Metric::ALL {
        assert_eq!(a.metric(m).pearson, b.metric(m).pearson);
        assert_eq!(a.metric(m).r_squared, b.metric(m).r_squared);
        let ci = b.metric(m).bootstrap.as_ref().unwrap().r_squared;
        assert!(ci[0] <= b.metric(m).r_squared && b.metric(m).r_squared <= ci[1]);
    }
}

#[test]
fn agreement_is_seed_reproducible() {
    let table = ScoreTable::from_csv_path(data("deepseek.csv")).unwrap();
    let mut opts = AgreementOptions::new(77);
    opts.permutations = 2_000;
    opts.bootstrap = 500;
    assert_eq!(agreement(&table, &opts).unwrap(), agreement(&table, &opts).unwrap());
}

#[test]
fn gpt5_f1_agreement_and_leave_one_out() {
    let table = ScoreTable::from_csv_path(data("gpt5.csv")).unwrap();
    let mut opts = AgreementOptions::new(0);
    opts.permutations = 0;
    opts.bootstrap = 0;
    let full = agreement(&table, &opts).unwrap();
    assert_eq!(full.points, 24);
    assert!((full.metric(Metric::F1).pearson - 0.923).abs() < 5e-4);
    let no_llm = leave_one_out(&table, "LLM-CG", &opts).unwrap();
    assert!((no_llm.metric(Metric::F1).pearson - 0.970).abs() < 5e-4);
    let no_rule = leave_one_out(&table, "RuleBayes", &opts).unwrap();
    assert!((no_rule.metric(Metric::F1).pearson - 0.801).abs() < 5e-4);
    let two = leave_one_out(&table, "SCITE", &opts).unwrap();
    assert_eq!(leave_one_out(&two_algorithm_table(&table), "RuleBayes", &opts), Err(StatsError::TooFewAlgorithms(1)));
    assert_eq!(two.algorithms.len(), 2);
    assert!(matches!(leave_one_out(&table, "PC", &opts), Err(StatsError::UnknownAlgorithm(_))));
}

fn two_algorithm_table(t: &ScoreTable) -> ScoreTable {
    t.without_algorithm("SCITE").unwrap()
}

fn obs(stratum: u32, level: &str, value: f64) -> StratifiedObservation {
    StratifiedObservation { stratum, level: level.into(), value }
}

#[test]
fn anova_matches_exhaustive_label_shuffles() {
    let values = [1.2, 0.7, 2.9, 2.2, 3.1, 1.9];
    let levels = ["a", "a", "a", "b", "b", "b"];
    let o: Vec<_> = values.iter().zip(levels).map(|(&v, l)| obs(4, l, v)).collect();
    let (observed, p) = permutation_f_test(&o, 20_000, 9).unwrap();
    // Exact null: all 20 ways of choosing which three observations are "a".
    let mut hits = 0;
    let mut total = 0;
    for mask in 0u32..64 {
        if mask.count_ones() != 3 {
            continue;
        }
        total += 1;
        let relabelled: Vec<_> =
            values.iter().enumerate().map(|(k, &v)| obs(4, if mask >> k & 1 == 1 { "a" } else { "b" }, v)).collect();
        let f = causaltext_core::stats::anova::stratified_f(&relabelled).unwrap().f;
        hits += u32::from(f >= observed.f * (1.0 - 1e-12));
    }
    let exact = hits as f64 / total as f64;
    let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
    assert!((p - exact).abs() <= 3.0 * se + 1e-4, "exact {exact}, permutation {p}");
}

#[test]
fn anova_null_and_extreme_cases() {
    let null: Vec<_> = (0..40)
        .map(|k| {
            obs(
                3 + (k % 2) as u32,
                if k % 4 < 2 { "lo" } else { "hi" },
                [1.0, 3.0, 5.0, 7.0, 2.0][k % 5] + (k / 20) as f64,
            )
        })
        .collect();
    let shifted: Vec<_> = (0..40)
        .map(|k| {
            obs(
                3 + (k % 2) as u32,
                if k % 4 < 2 { "lo" } else { "hi" },
                (k % 7) as f64 * 0.01 + if k % 4 < 2 { 0.0 } else { 100.0 },
            )
        })
        .collect();
    let report = permutation_anova(
        &[
            AnovaFactor { parameter: "p".into(), metric: "f1".into(), observations: shifted },
            AnovaFactor { parameter: "lambda".into(), metric: "f1".into(), observations: null.clone() },
        ],
        2_000,
        4,
    )
    .unwrap();
    let extreme = &report.rows[0];
    assert_eq!(extreme.p_value, 1.0 / 2_001.0);
    assert!(extreme.partial_eta_squared > 0.99);
    let flat = &report.rows[1];
    assert!(flat.partial_eta_squared < 0.05);
    assert!(flat.p_value > 0.2);
    for r in &report.rows {
        assert!((0.0..=1.0).contains(&r.partial_eta_squared));
        assert!(r.p_adjusted >= r.p_value);
    }
}
