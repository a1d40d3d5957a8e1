#![allow(dead_code)]

use p2hnns::{HyperplaneQuery, Neighbor, PointSet, SearchObserver};

/// Plain sequential dot product, independent of the library's kernels.
pub fn naive_distance(data: &PointSet, id: usize, q: &HyperplaneQuery) -> f64 {
    data.row(id)
        .iter()
        .zip(q.coeffs())
        .map(|(&x, &c)| f64::from(x) * c)
        .sum::<f64>()
        .abs()
}

/// Sorted distances of the `k` closest points by full sort.
pub fn naive_topk_distances(data: &PointSet, q: &HyperplaneQuery, k: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..data.len())
        .map(|i| naive_distance(data, i, q))
        .collect();
    d.sort_by(f64::total_cmp);
    d.truncate(k);
    d
}

pub fn assert_same_distances(got: &[Neighbor], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "result length");
    let mut g: Vec<f64> = got.iter().map(|n| n.distance).collect();
    g.sort_by(f64::total_cmp);
    for (i, (a, b)) in g.iter().zip(want).enumerate() {
        assert!((a - b).abs() <= tol, "entry {i}: {a} vs {b}");
    }
}

/// Records every pruning decision for later checking.
#[derive(Default)]
pub struct Recorder {
    pub nodes: Vec<(usize, f64)>,
    pub points: Vec<(u32, f64)>,
}

impl SearchObserver for Recorder {
    fn node_pruned(&mut self, node: usize, lambda: f64) {
        self.nodes.push((node, lambda));
    }

    fn point_skipped(&mut self, id: u32, lambda: f64) {
        self.points.push((id, lambda));
    }
}
