use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmspace::evaluation::{
    build_relevance, cpc, pearson_vec, precision_at_k, priority, random_baseline_precision, recall_at_k, retrieval_report, spearman_vec,
    CpcDivisor,
};
use tmspace::model_space::{LabeledMatrix, MatrixKind, RankingTable};

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[test]
fn precision_and_recall_hand_cases() {
    let relevant: HashSet<String> = names(&["A", "B", "C", "D", "E"]).into_iter().collect();
    let ranking = names(&["A", "B", "X", "C", "Y", "D", "E"]);
    assert_eq!(precision_at_k(&ranking, &relevant, 3).unwrap(), 2.0 / 3.0);
    assert_eq!(recall_at_k(&ranking, &relevant, 3).unwrap(), 2.0 / 5.0);
    assert_eq!(recall_at_k(&ranking, &relevant, 7).unwrap(), 1.0);
}

#[test]
fn cpc_on_three_tasks() {
    let ids = names(&["A", "B", "C"]);
    let oracle = RankingTable::from_orders(&[
        ("A".into(), names(&["B", "C"])),
        ("B".into(), names(&["A", "C"])),
        ("C".into(), names(&["B", "A"])),
    ])
    .unwrap();
    #[rustfmt::skip]
    let rho = LabeledMatrix::new(ids, MatrixKind::Svcca, vec![
        1.0, 0.9, 0.3,
        0.9, 1.0, 0.6,
        0.3, 0.6, 1.0,
    ]).unwrap();
    // rank 1: (B->A) 0.9, (A->B) 0.9, (B->C) 0.6; rank 2: (C->A) 0.3, (C->B) 0.6, (A->C) 0.3
    let curve = cpc(&rho, &oracle, CpcDivisor::ModelCount).unwrap();
    let ys = curve.ys();
    assert!((ys[0] - 2.4 / 3.0).abs() <= 1e-15);
    assert!((ys[1] - 1.2 / 3.0).abs() <= 1e-15);
    assert_eq!(curve.points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1.0, 2.0]);
}

#[test]
fn priority_matches_a_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let ids: Vec<String> = (0..20).map(|i| format!("task{i:02}")).collect();
    let orders: Vec<(String, Vec<String>)> = ids
        .iter()
        .map(|t| {
            let mut others: Vec<String> = ids.iter().filter(|s| *s != t).cloned().collect();
            others.shuffle(&mut rng);
            (t.clone(), others)
        })
        .collect();
    let table = RankingTable::from_orders(&orders).unwrap();
    let mut tally = vec![(0usize, 0usize); ids.len()];
    for (_, order) in &orders {
        for (pos, src) in order.iter().enumerate() {
            let i = ids.iter().position(|x| x == src).unwrap();
            tally[i].0 += pos + 1;
            tally[i].1 += 1;
        }
    }
    for ((id, p), (id2, (sum, cnt))) in priority(&table).unwrap().iter().zip(ids.iter().zip(&tally)) {
        assert_eq!(id, id2);
        assert_eq!(*cnt, 19);
        assert_eq!(*p, *sum as f64 / *cnt as f64);
    }
}

#[test]
fn random_rankings_average_to_the_hypergeometric_mean() {
    let (n, k_rel, trials) = (19usize, 5usize, 10_000usize);
    let q = k_rel as f64 / n as f64;
    for k in 1..=n {
        let vals = random_baseline_precision(n, k_rel, k, trials, 100 + k as u64).unwrap();
        let mean = vals.iter().sum::<f64>() / trials as f64;
        let kf = k as f64;
        // variance of hits / k for a draw of k out of n without replacement
        let var = kf * q * (1.0 - q) * (n as f64 - kf) / (n as f64 - 1.0) / (kf * kf);
        let sigma = (var / trials as f64).sqrt();
        assert!((mean - q).abs() <= 3.0 * sigma + 1e-12, "K={k}: {mean} vs {q} (sigma {sigma})");
    }
}

#[test]
fn oracle_as_its_own_estimate_is_perfect_up_to_the_relevant_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 8;
    let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
    let mut d = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(1.0..3.0);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let table = RankingTable::from_matrix(&LabeledMatrix::new(ids, MatrixKind::Distance, d).unwrap()).unwrap();
    let relevance = build_relevance(&table, 5).unwrap();
    let report = retrieval_report(&table, &relevance).unwrap();
    for k in 1..=5 {
        assert_eq!(report.precision_at(k), 1.0);
    }
    assert_eq!(report.recall_at(5), 1.0);
}

#[test]
fn reversed_ranks_give_minus_one() {
    assert!((spearman_vec(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() <= 1e-15);
}

fn ranking_and_relevant() -> impl Strategy<Value = (Vec<String>, HashSet<String>, usize)> {
    (2usize..25).prop_flat_map(|n| {
        let all: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        (Just(all.clone()).prop_shuffle(), proptest::sample::subsequence(all, 1..=n), 1..=n)
            .prop_map(|(ranking, rel, k)| (ranking, rel.into_iter().collect(), k))
    })
}

proptest! {
    #[test]
    fn recall_is_rescaled_precision((ranking, relevant, k) in ranking_and_relevant()) {
        let p = precision_at_k(&ranking, &relevant, k).unwrap();
        let r = recall_at_k(&ranking, &relevant, k).unwrap();
        prop_assert!((r - p * k as f64 / relevant.len() as f64).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        if k > 1 {
            prop_assert!(recall_at_k(&ranking, &relevant, k - 1).unwrap() <= r);
        }
    }

    #[test]
    fn correlations_are_symmetric_and_transform_invariant(
        xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
        noise_seed in any::<u64>(),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-20.0..20.0)).collect();
        prop_assume!(pearson_vec(&xs, &ys).is_ok());
        let p = pearson_vec(&xs, &ys).unwrap();
        let s = spearman_vec(&xs, &ys).unwrap();
        prop_assert!((p - pearson_vec(&ys, &xs).unwrap()).abs() <= 1e-12);
        prop_assert!((s - spearman_vec(&ys, &xs).unwrap()).abs() <= 1e-12);
        let affine: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        prop_assert!((p - pearson_vec(&xs, &affine).unwrap()).abs() <= 1e-9);
        let monotone: Vec<f64> = ys.iter().map(|y| (y / 10.0).exp() + y.powi(3)).collect();
        prop_assert!((s - spearman_vec(&xs, &monotone).unwrap()).abs() <= 1e-12);
    }
}
