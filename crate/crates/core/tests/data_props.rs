use p2hnns::data::parse_vectors;
use p2hnns::{
    exact_topk, gaussian_points, generate_queries, normalize_query, BcTree, P2hIndex, PointSet,
    SearchParams, VectorFormat,
};
use proptest::prelude::*;

fn small_rows() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (1usize..8)
        .prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-50.0f32..50.0, d), 1..200))
}

/// Distance from `p` to `{y : <w, y> + b = 0}` in the original space.
fn euclidean_to_plane(p: &[f32], w: &[f64], b: f64) -> f64 {
    let dot: f64 = p.iter().zip(w).map(|(&x, c)| f64::from(x) * c).sum();
    let wn = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    (dot + b).abs() / wn
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn normalize_is_idempotent(
        raw in prop::collection::vec(-1e3f64..1e3, 2..20),
    ) {
        prop_assume!(raw[..raw.len() - 1].iter().any(|&v| v != 0.0));
        let once = normalize_query(&raw).unwrap();
        let twice = normalize_query(once.coeffs()).unwrap();
        prop_assert_eq!(&once, &twice);
        let n: f64 = once.coeffs()[..raw.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn top1_matches_original_space_distance(
        rows in small_rows(),
        w_seed in prop::collection::vec(-5.0f64..5.0, 8),
        b in -20.0f64..20.0,
    ) {
        let data = PointSet::from_rows(&rows).unwrap();
        let d = data.raw_dim();
        let w = &w_seed[..d];
        prop_assume!(w.iter().any(|v| v.abs() > 1e-3));
        let mut raw = w.to_vec();
        raw.push(b);
        let q = normalize_query(&raw).unwrap();
        let best = exact_topk(&data, &q, 1).unwrap()[0];
        let dists: Vec<f64> = (0..data.len()).map(|i| euclidean_to_plane(data.raw_row(i), w, b)).collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((dists[best.id as usize] - min).abs() <= 1e-6 * (1.0 + min));
        prop_assert!((best.distance - min).abs() <= 1e-6 * (1.0 + min));
    }

    #[test]
    fn topk_distances_invariant_under_row_permutation(
        seed in any::<u64>(),
        rot in 0usize..500,
    ) {
        let data = gaussian_points(300, 4, seed).unwrap();
        let mut rows: Vec<Vec<f32>> = (0..data.len()).map(|i| data.raw_row(i).to_vec()).collect();
        let shift = rot % rows.len();
        rows.rotate_left(shift);
        rows.reverse();
        let shuffled = PointSet::from_rows(&rows).unwrap();
        for q in generate_queries(&data, 3, seed).unwrap() {
            let a: Vec<f64> = exact_topk(&data, &q, 15).unwrap().iter().map(|n| n.distance).collect();
            let b: Vec<f64> = exact_topk(&shuffled, &q, 15).unwrap().iter().map(|n| n.distance).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_parses_whatever_rows_encode_to(rows in small_rows()) {
        let data = PointSet::from_rows(&rows).unwrap();
        let text = data.encode(VectorFormat::Csv).unwrap();
        prop_assert_eq!(parse_vectors(&text, VectorFormat::Csv).unwrap(), data);
    }
}

#[test]
fn query_generation_is_deterministic_and_unit() {
    let data = gaussian_points(1000, 10, 3).unwrap();
    let a = generate_queries(&data, 100, 7).unwrap();
    let b = generate_queries(&data, 100, 7).unwrap();
    assert_eq!(a, b);
    for q in &a {
        let n: f64 = q.coeffs()[..10].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
    }
    assert_ne!(a, generate_queries(&data, 100, 8).unwrap());
}

#[test]
fn generated_queries_pass_near_an_anchor_point() {
    let data = gaussian_points(2000, 5, 4).unwrap();
    let bc = BcTree::build(&data, 50, 1).unwrap();
    let jitter_sd = 0.05 * data.mean_raw_norm();
    let mut cutting = 0;
    for q in generate_queries(&data, 200, 2).unwrap() {
        let (mut below, mut above) = (0, 0);
        for i in 0..data.len() {
            let s: f64 = data
                .row(i)
                .iter()
                .zip(q.coeffs())
                .map(|(&x, c)| f64::from(x) * c)
                .sum();
            if s < 0.0 {
                below += 1;
            } else {
                above += 1;
            }
        }
        if below > 0 && above > 0 {
            cutting += 1;
        }
        // The anchor sits |jitter| away; 6 sd is a generous cap.
        let res = bc.search(&q, &SearchParams::exact(1)).unwrap();
        assert!(res.neighbors[0].distance <= 6.0 * jitter_sd);
    }
    assert!(
        cutting >= 190,
        "only {cutting} of 200 hyperplanes cut the cloud"
    );
}

#[test]
fn malformed_inputs_are_rejected() {
    let mut bad = Vec::new();
    bad.extend_from_slice(&4i32.to_le_bytes());
    for v in [1.0f32, 2.0, 3.0] {
        bad.extend_from_slice(&v.to_le_bytes());
    }
    assert!(parse_vectors(&bad, VectorFormat::Fvecs).is_err());
    assert!(parse_vectors(b"1,2\n3\n", VectorFormat::Csv).is_err());
    assert!(parse_vectors(b"1,x\n", VectorFormat::Csv).is_err());
    assert!(parse_vectors(b"", VectorFormat::Fvecs).is_err());
    assert!(normalize_query(&[0.0, 0.0, 5.0]).is_err());
    assert!(normalize_query(&[f64::NAN, 1.0]).is_err());
}
