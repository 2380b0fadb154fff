mod common;

use common::gaussian;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmspace::attribution::{attribute_probe, AttributionMethod, AttributionMode, AttributionSet, DEFAULT_EXACT_CAP};
use tmspace::model_io::{ModelSpec, PreprocSpec};
use tmspace::model_space::{affinity_matrix, distance, pair_score, rank_sources, LabeledMatrix, MatrixKind};
use tmspace::probe::ImageShape;
use tmspace::synthetic::generate_probe;
use tmspace::tensor_core::{Graph, LayerSpec, Tensor};

const SHAPE: [usize; 3] = [4, 4, 1];

fn set_from_maps(id: &str, maps: Vec<Tensor>) -> AttributionSet {
    AttributionSet {
        model_id: id.into(),
        model_fingerprint: format!("fp-{id}"),
        method: AttributionMethod::GradientTimesInput,
        mode: AttributionMode::SinglePass,
        probe_checksum: [7; 32],
        shape: ImageShape::new(SHAPE[1], SHAPE[0], SHAPE[2]),
        passes: maps.len() as u64,
        maps,
    }
}

/// Map pair with cosine exactly `c`: `b = c u + sqrt(1 - c^2) v` where `v` is
/// `u`'s Gram-Schmidt complement of a random vector.
fn pair_with_cosine(rng: &mut ChaCha8Rng, c: f64) -> (Tensor, Tensor) {
    let u = gaussian(rng, &SHAPE, 1.0);
    let u = u.scale(1.0 / u.norm());
    let r = gaussian(rng, &SHAPE, 1.0);
    let proj = r.dot(&u).unwrap();
    let v = r.zip_map(&u, |a, b| a - proj * b).unwrap();
    let v = v.scale(1.0 / v.norm());
    let b = u.zip_map(&v, |p, q| c * p + (1.0 - c * c).sqrt() * q).unwrap();
    // arbitrary positive magnitudes, which the cosine ignores
    (u.scale(3.0), b.scale(0.25))
}

#[test]
fn distance_from_constructed_cosines() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cosines = [0.9, 0.8, 0.7];
    let (a, b): (Vec<_>, Vec<_>) = cosines.iter().map(|&c| pair_with_cosine(&mut rng, c)).unzip();
    let (sa, sb) = (set_from_maps("a", a), set_from_maps("b", b));
    let d = distance(&sa, &sb).unwrap();
    assert!((d - 1.25).abs() <= 1e-12, "{d}");
    assert_eq!(d, distance(&sb, &sa).unwrap());

    let (a, b): (Vec<_>, Vec<_>) = [1.0, 0.5].iter().map(|&c| pair_with_cosine(&mut rng, c)).unzip();
    let d = distance(&set_from_maps("a", a), &set_from_maps("b", b)).unwrap();
    assert!((d - 4.0 / 3.0).abs() <= 1e-12, "{d}");
}

#[test]
fn raising_one_cosine_lowers_the_distance() {
    let mut prev = f64::INFINITY;
    for c in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (a, b): (Vec<_>, Vec<_>) = [0.4, c, 0.6].iter().map(|&c| pair_with_cosine(&mut rng, c)).unzip();
        let d = distance(&set_from_maps("a", a), &set_from_maps("b", b)).unwrap();
        assert!(d < prev);
        prev = d;
    }
}

fn mlp(rng: &mut ChaCha8Rng) -> Graph {
    Graph::new(
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                weight: gaussian(rng, &[6, 64], 0.3),
                bias: gaussian(rng, &[6], 0.1),
            },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                weight: gaussian(rng, &[4, 6], 0.5),
                bias: gaussian(rng, &[4], 0.1),
            },
            LayerSpec::Tanh,
        ],
        vec![8, 8, 1],
    )
    .unwrap()
}

fn perturbed(rng: &mut ChaCha8Rng, g: &Graph, sigma: f64) -> Graph {
    let layers = g
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { weight, bias } => LayerSpec::Dense {
                weight: weight.zip_map(&gaussian(rng, weight.shape(), sigma), |a, b| a + b).unwrap(),
                bias: bias.clone(),
            },
            other => other.clone(),
        })
        .collect();
    Graph::new(layers, g.input_shape().to_vec()).unwrap()
}

#[test]
fn near_duplicate_pairs_are_the_closest() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (base1, base2, outlier) = (mlp(&mut rng), mlp(&mut rng), mlp(&mut rng));
    let graphs = [
        ("p1a", perturbed(&mut rng, &base1, 0.01)),
        ("p1b", perturbed(&mut rng, &base1, 0.01)),
        ("p2a", perturbed(&mut rng, &base2, 0.01)),
        ("p2b", perturbed(&mut rng, &base2, 0.01)),
        ("out", outlier),
    ];
    let probe = generate_probe(40, ImageShape::new(8, 8, 1), 5).unwrap();
    let sets: Vec<AttributionSet> = graphs
        .iter()
        .map(|(id, g)| {
            let model = ModelSpec::new(*id, "t", PreprocSpec::identity(8, 8, 1), g.clone()).unwrap();
            attribute_probe(&model, &probe, AttributionMethod::GradientTimesInput, AttributionMode::SinglePass, DEFAULT_EXACT_CAP).unwrap()
        })
        .collect();
    let aff = affinity_matrix(&sets).unwrap();
    let mut pairs: Vec<(f64, usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).map(|(i, j)| (aff.distance(i, j), i, j)).collect();
    // exhaustive comparison: both duplicate pairs beat every other pair
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut top: Vec<(usize, usize)> = pairs[..2].iter().map(|p| (p.1, p.2)).collect();
    top.sort();
    assert_eq!(top, vec![(0, 1), (2, 3)], "{pairs:?}");
    for i in 0..5 {
        assert!((aff.distance(i, i) - 1.0).abs() <= 1e-9);
        for j in 0..5 {
            assert_eq!(aff.distance(i, j), aff.distance(j, i));
            assert_eq!(aff.distance(i, j), distance(&sets[i], &sets[j]).unwrap());
        }
    }
}

#[test]
fn ranking_matches_an_insertion_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let n = 20;
    let ids: Vec<String> = (0..n).map(|i| format!("m{:02}", (i * 7) % n)).collect();
    let mut values = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            // coarse grid so that ties occur
            let d = 1.0 + rng.random_range(0..12) as f64 * 0.25;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    let matrix = LabeledMatrix::new(ids.clone(), MatrixKind::Distance, values.clone()).unwrap();
    for (t, target) in ids.iter().enumerate() {
        let mut expected: Vec<(f64, String)> = Vec::new();
        for (j, id) in ids.iter().enumerate() {
            if j == t {
                continue;
            }
            let item = (values[t * n + j], id.clone());
            let pos = expected.iter().position(|e| item.0 < e.0 || (item.0 == e.0 && item.1 < e.1)).unwrap_or(expected.len());
            expected.insert(pos, item);
        }
        let got = rank_sources(&matrix, target).unwrap();
        assert_eq!(got.len(), n - 1);
        for (r, (src, (d, id))) in got.iter().zip(&expected).enumerate() {
            assert_eq!(&src.id, id);
            assert_eq!(src.distance, Some(*d));
            assert_eq!(src.rank, r + 1);
        }
    }
}

fn random_sets(seed: u64, models: usize, images: usize) -> Vec<AttributionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared: Vec<Tensor> = (0..images).map(|_| gaussian(&mut rng, &SHAPE, 1.0)).collect();
    (0..models)
        .map(|m| {
            let maps = shared.iter().map(|s| s.zip_map(&gaussian(&mut rng, &SHAPE, 0.8), |a, b| a + b).unwrap()).collect();
            set_from_maps(&format!("m{m}"), maps)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distances_ignore_probe_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let sets = random_sets(seed, 4, 9);
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let permuted: Vec<AttributionSet> = sets
            .iter()
            .map(|s| set_from_maps(&s.model_id, order.iter().map(|&k| s.maps[k].clone()).collect()))
            .collect();
        let (a, b) = (affinity_matrix(&sets).unwrap(), affinity_matrix(&permuted).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((a.distance(i, j) - b.distance(i, j)).abs() <= 1e-12);
            }
            let (ra, rb) = (rank_sources(&a.distances(), &a.ids[i]).unwrap(), rank_sources(&b.distances(), &b.ids[i]).unwrap());
            prop_assert_eq!(ra.iter().map(|r| &r.id).collect::<Vec<_>>(), rb.iter().map(|r| &r.id).collect::<Vec<_>>());
        }
    }

    #[test]
    fn distances_ignore_positive_scaling(seed in any::<u64>(), model in 0usize..4, log_scale in -6.0f64..6.0) {
        let sets = random_sets(seed, 4, 7);
        let factor = 10f64.powf(log_scale);
        let mut scaled = sets.clone();
        scaled[model].maps = scaled[model].maps.iter().map(|m| m.scale(factor)).collect();
        let (a, b) = (affinity_matrix(&sets).unwrap(), affinity_matrix(&scaled).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((a.distance(i, j) - b.distance(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pair_score_is_symmetric(seed in any::<u64>()) {
        let sets = random_sets(seed, 2, 5);
        let (ab, ba) = (pair_score(&sets[0], &sets[1]).unwrap(), pair_score(&sets[1], &sets[0]).unwrap());
        prop_assert_eq!(ab.distance(), ba.distance());
    }
}
