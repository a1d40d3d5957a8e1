mod common;

use common::{assert_same_distances, naive_topk_distances};
use p2hnns::oracle::ExhaustiveIndex;
use p2hnns::{
    exact_topk, gaussian_points, generate_queries, normalize_query, BallTree, BcTree, LeafPruning,
    P2hIndex, PointSet, Preference, SearchParams,
};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

fn check_all(data: &PointSet, leaf_size: usize, seed: u64, ks: &[usize]) {
    let ball = BallTree::build(data, leaf_size, seed).unwrap();
    let bc = BcTree::build(data, leaf_size, seed).unwrap();
    let queries = generate_queries(data, 20, seed ^ 0x55).unwrap();
    for q in &queries {
        for &k in ks {
            let want = naive_topk_distances(data, q, k);
            for pref in [Preference::Center, Preference::LowerBound] {
                let params = SearchParams::exact(k).with_preference(pref);
                assert_same_distances(&ball.search(q, &params).unwrap().neighbors, &want, TOL);
                for pruning in [
                    LeafPruning::FULL,
                    LeafPruning::WITHOUT_CONE,
                    LeafPruning::WITHOUT_BALL,
                    LeafPruning::NONE,
                ] {
                    let res = bc.search_with(q, &params, pruning).unwrap();
                    assert_same_distances(&res.neighbors, &want, TOL);
                }
            }
        }
    }
}

#[test]
fn trees_match_naive_scan_across_shapes() {
    for (n, d, leaf) in [
        (3000, 8, 20),
        (2000, 32, 50),
        (500, 2, 1),
        (1500, 64, 100),
        (50, 5, 100),
    ] {
        let data = gaussian_points(n, d, n as u64).unwrap();
        check_all(&data, leaf, 11, &[1, 5, 40]);
    }
}

#[test]
fn k_equal_to_n_returns_every_point() {
    let data = gaussian_points(300, 6, 2).unwrap();
    let q = &generate_queries(&data, 1, 9).unwrap()[0];
    let bc = BcTree::build(&data, 16, 4).unwrap();
    let res = bc.search(q, &SearchParams::exact(300)).unwrap();
    let mut ids = res.ids();
    ids.sort_unstable();
    assert_eq!(ids, (0..300).collect::<Vec<u32>>());
}

#[test]
fn results_are_sorted_ascending() {
    let data = gaussian_points(2000, 10, 3).unwrap();
    let bc = BcTree::build(&data, 32, 1).unwrap();
    for q in generate_queries(&data, 10, 5).unwrap() {
        let d = bc.search(&q, &SearchParams::exact(25)).unwrap().distances();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn exhaustive_index_agrees_with_exact_topk() {
    let data = gaussian_points(800, 7, 8).unwrap();
    let index = ExhaustiveIndex::new(&data);
    for q in generate_queries(&data, 5, 1).unwrap() {
        let a = index.search(&q, &SearchParams::exact(10)).unwrap();
        let b = exact_topk(&data, &q, 10).unwrap();
        assert_eq!(a.neighbors, b);
        assert_eq!(a.counters.candidates_verified, 800);
    }
}

/// Small clustered data: well-separated blobs give the trees real work.
fn clustered(n: usize, d: usize, seed: u64) -> PointSet {
    let base = gaussian_points(n, d, seed).unwrap();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let shift = (i % 4) as f32 * 20.0;
            base.raw_row(i).iter().map(|v| v * 0.5 + shift).collect()
        })
        .collect();
    PointSet::from_rows(&rows).unwrap()
}

#[test]
fn clustered_data_is_exact_and_pruned() {
    let data = clustered(4000, 6, 21);
    check_all(&data, 40, 3, &[1, 10]);
    let bc = BcTree::build(&data, 40, 3).unwrap();
    let queries = generate_queries(&data, 20, 4).unwrap();
    let verified: u64 = queries
        .iter()
        .map(|q| {
            bc.search(q, &SearchParams::exact(1))
                .unwrap()
                .counters
                .candidates_verified
        })
        .sum();
    assert!(verified < 20 * 4000, "no pruning at all on clustered data");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_sets_match_naive(
        n in 1usize..300,
        d in 1usize..9,
        leaf in 1usize..40,
        seed in any::<u64>(),
        k_raw in 1usize..50,
    ) {
        let data = gaussian_points(n, d, seed).unwrap();
        let k = k_raw.min(data.len());
        let ball = BallTree::build(&data, leaf, seed).unwrap();
        let bc = BcTree::build(&data, leaf, seed).unwrap();
        for q in generate_queries(&data, 3, seed.wrapping_add(1)).unwrap() {
            let want = naive_topk_distances(&data, &q, k);
            assert_same_distances(&ball.search(&q, &SearchParams::exact(k)).unwrap().neighbors, &want, TOL);
            assert_same_distances(&bc.search(&q, &SearchParams::exact(k)).unwrap().neighbors, &want, TOL);
        }
    }

    #[test]
    fn answers_invariant_under_query_scaling(
        seed in any::<u64>(),
        scale in prop_oneof![1e-3f64..1e-1, 1.0f64..1e3],
    ) {
        let data = gaussian_points(400, 5, seed).unwrap();
        let bc = BcTree::build(&data, 20, seed).unwrap();
        let q = &generate_queries(&data, 1, seed).unwrap()[0];
        let scaled: Vec<f64> = q.coeffs().iter().map(|c| c * scale).collect();
        let q2 = normalize_query(&scaled).unwrap();
        let a = bc.search(q, &SearchParams::exact(10)).unwrap();
        let b = bc.search(&q2, &SearchParams::exact(10)).unwrap();
        for (x, y) in a.distances().iter().zip(b.distances()) {
            prop_assert!((x - y).abs() <= TOL);
        }
    }
}
