//! BC-Tree: a Ball-Tree whose leaves additionally keep, for every point, its
//! radius to the leaf center and its cone coordinates. Leaves are scanned
//! with point-level pruning, and the right child's center inner product is
//! derived from the parent's and the left child's in `O(1)`.

use crate::bounds::{
    child_ip_unchecked, cone_bound, inner_product, inner_product_f64, node_ball_bound,
    point_ball_bound, ConeEntry, QueryLeafContext,
};
use crate::data::{HyperplaneQuery, PointSet};
use crate::error::Result;
use crate::tree::{
    build_topology, check_search_args, CenterRule, NodeView, NoopObserver, P2hIndex, Preference,
    SearchObserver, SearchParams, SearchResult, SearchState, Topology,
};

/// Which point-level bounds a leaf scan applies. Disabling both turns the
/// scan into an exhaustive one while keeping collaborative inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LeafPruning {
    pub ball: bool,
    pub cone: bool,
}

impl LeafPruning {
    pub const FULL: LeafPruning = LeafPruning {
        ball: true,
        cone: true,
    };
    pub const WITHOUT_CONE: LeafPruning = LeafPruning {
        ball: true,
        cone: false,
    };
    pub const WITHOUT_BALL: LeafPruning = LeafPruning {
        ball: false,
        cone: true,
    };
    pub const NONE: LeafPruning = LeafPruning {
        ball: false,
        cone: false,
    };
}

impl Default for LeafPruning {
    fn default() -> Self {
        LeafPruning::FULL
    }
}

/// Per-point leaf arrays, aligned with the stored point order.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct LeafArrays {
    pub r_x: Vec<f32>,
    pub x_cos: Vec<f32>,
    pub x_sin: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcTree {
    pub(crate) topo: Topology,
    pub(crate) leaf: LeafArrays,
}

/// Rounds toward +inf so a stored radius never understates the true one.
fn round_up_f32(v: f64) -> f32 {
    let f = v as f32;
    if f64::from(f) < v {
        f.next_up()
    } else {
        f
    }
}

impl BcTree {
    /// Same splits as [`crate::BallTree::build`] for equal `(data,
    /// leaf_size, seed)`; internal centers come from the children.
    pub fn build(data: &PointSet, leaf_size: usize, seed: u64) -> Result<Self> {
        let mut topo = build_topology(data, leaf_size, seed, CenterRule::FromChildren)?;
        let n = topo.len();
        let mut leaf = LeafArrays {
            r_x: vec![0.0; n],
            x_cos: vec![0.0; n],
            x_sin: vec![0.0; n],
        };
        let mut scratch = LeafScratch::default();
        for index in 0..topo.nodes.len() {
            if topo.nodes[index].is_leaf() {
                fill_leaf(&mut topo, &mut leaf, index, &mut scratch);
            }
        }
        Ok(BcTree { topo, leaf })
    }

    pub fn leaf_size(&self) -> usize {
        self.topo.leaf_size
    }

    pub fn seed(&self) -> u64 {
        self.topo.seed
    }

    pub fn num_nodes(&self) -> usize {
        self.topo.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.topo.leaf_count()
    }

    pub fn depth(&self) -> usize {
        self.topo.depth()
    }

    pub fn node(&self, index: usize) -> NodeView<'_> {
        self.topo.view(index)
    }

    pub fn permutation(&self) -> &[u32] {
        &self.topo.ids
    }

    /// Stored cone entries of a leaf, in scan order.
    pub fn leaf_entries(&self, index: usize) -> Vec<ConeEntry> {
        self.topo.nodes[index]
            .span()
            .map(|pos| ConeEntry {
                x_cos: f64::from(self.leaf.x_cos[pos]),
                x_sin: f64::from(self.leaf.x_sin[pos]),
                r_x: f64::from(self.leaf.r_x[pos]),
            })
            .collect()
    }

    /// Search applying only the point-level bounds enabled in `pruning`.
    pub fn search_with(
        &self,
        query: &HyperplaneQuery,
        params: &SearchParams,
        pruning: LeafPruning,
    ) -> Result<SearchResult> {
        self.search_observed(query, params, pruning, &mut NoopObserver)
    }

    pub fn search_observed<O: SearchObserver>(
        &self,
        query: &HyperplaneQuery,
        params: &SearchParams,
        pruning: LeafPruning,
        observer: &mut O,
    ) -> Result<SearchResult> {
        check_search_args(self.topo.len(), self.topo.dim, query, params.k)?;
        let mut search = BcSearch {
            tree: self,
            q: query.coeffs(),
            q_norm: query.norm(),
            preference: params.preference,
            pruning,
            state: SearchState::new(params.k, params.budget),
            observer,
        };
        let ip_root = inner_product_f64(self.topo.center(0), search.q);
        search.state.counters.center_ip_count += 1;
        search.visit(0, ip_root);
        Ok(search.state.into_result())
    }
}

impl P2hIndex for BcTree {
    fn search(&self, query: &HyperplaneQuery, params: &SearchParams) -> Result<SearchResult> {
        self.search_with(query, params, LeafPruning::FULL)
    }

    fn len(&self) -> usize {
        self.topo.len()
    }

    fn dim(&self) -> usize {
        self.topo.dim
    }
}

/// Computes the per-point arrays of one leaf and reorders its points by
/// descending `r_x` (ascending id on ties).
/// `[||x||^2, <x, c>, ||x - c||^2]` in one pass, four lanes per sum.
fn leaf_moments(x: &[f32], c: &[f64]) -> [f64; 3] {
    let mut acc = [[0.0f64; 4]; 3];
    let xs = x.chunks_exact(4);
    let cs = c.chunks_exact(4);
    let (xr, cr) = (xs.remainder(), cs.remainder());
    for (xa, ca) in xs.zip(cs) {
        for lane in 0..4 {
            let xi = f64::from(xa[lane]);
            let ci = ca[lane];
            acc[0][lane] += xi * xi;
            acc[1][lane] += xi * ci;
            acc[2][lane] += (xi - ci) * (xi - ci);
        }
    }
    let mut out = acc.map(|a| (a[0] + a[1]) + (a[2] + a[3]));
    for (&xi, &ci) in xr.iter().zip(cr) {
        let xi = f64::from(xi);
        out[0] += xi * xi;
        out[1] += xi * ci;
        out[2] += (xi - ci) * (xi - ci);
    }
    out
}

/// Buffers reused across leaves during build.
#[derive(Default)]
struct LeafScratch {
    rows: Vec<(f32, f32, f32, u32, usize, f64)>,
    original: Vec<f32>,
}

fn fill_leaf(topo: &mut Topology, leaf: &mut LeafArrays, index: usize, scratch: &mut LeafScratch) {
    let dim = topo.dim;
    let span = topo.nodes[index].span();
    let center_norm = topo.nodes[index].center_norm;
    let center = &topo.centers[index * dim..(index + 1) * dim];

    let rows = &mut scratch.rows;
    rows.clear();
    rows.extend(span.clone().map(|pos| {
        let x = &topo.points[pos * dim..(pos + 1) * dim];
        let [norm_sq, ip, dist_sq] = leaf_moments(x, center);
        let e = ConeEntry::from_parts(norm_sq, ip, center_norm, dist_sq.sqrt());
        (
            round_up_f32(e.r_x),
            e.x_cos as f32,
            e.x_sin as f32,
            topo.ids[pos],
            pos,
            dist_sq,
        )
    }));
    let max_dist_sq = rows.iter().map(|r| r.5).fold(0.0f64, f64::max);
    topo.nodes[index].radius = max_dist_sq.sqrt();
    rows.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.3.cmp(&b.3)));

    let original = &mut scratch.original;
    original.clear();
    original.extend_from_slice(&topo.points[span.start * dim..span.end * dim]);
    for (offset, &(r_x, x_cos, x_sin, id, from, _)) in rows.iter().enumerate() {
        let pos = span.start + offset;
        leaf.r_x[pos] = r_x;
        leaf.x_cos[pos] = x_cos;
        leaf.x_sin[pos] = x_sin;
        topo.ids[pos] = id;
        let src = (from - span.start) * dim;
        topo.points[pos * dim..(pos + 1) * dim].copy_from_slice(&original[src..src + dim]);
    }
}

struct BcSearch<'a, O> {
    tree: &'a BcTree,
    q: &'a [f64],
    q_norm: f64,
    preference: Preference,
    pruning: LeafPruning,
    state: SearchState,
    observer: &'a mut O,
}

impl<O: SearchObserver> BcSearch<'_, O> {
    fn visit(&mut self, index: usize, ip_node: f64) {
        if self.state.is_halted() {
            return;
        }
        self.state.counters.nodes_visited += 1;
        let topo = &self.tree.topo;
        let node = &topo.nodes[index];
        let lb = node_ball_bound(ip_node, self.q_norm, node.radius);
        if lb >= self.state.lambda() {
            if O::ENABLED {
                self.observer.node_pruned(index, self.state.lambda());
            }
            return;
        }
        if node.is_leaf() {
            self.scan_with_pruning(index, ip_node);
            return;
        }
        let (left, right) = (index + 1, node.right as usize);
        let ip_left = inner_product_f64(topo.center(left), self.q);
        self.state.counters.center_ip_count += 1;
        let ip_right = child_ip_unchecked(
            ip_node,
            ip_left,
            node.size as usize,
            topo.nodes[left].size as usize,
            topo.nodes[right].size as usize,
        );

        let left_first = match self.preference {
            Preference::Center => ip_left.abs() <= ip_right.abs(),
            Preference::LowerBound => {
                node_ball_bound(ip_left, self.q_norm, topo.nodes[left].radius)
                    <= node_ball_bound(ip_right, self.q_norm, topo.nodes[right].radius)
            }
        };
        if left_first {
            self.visit(left, ip_left);
            self.visit(right, ip_right);
        } else {
            self.visit(right, ip_right);
            self.visit(left, ip_left);
        }
    }

    fn scan_with_pruning(&mut self, index: usize, ip_node: f64) {
        self.state.counters.leaves_scanned += 1;
        let topo = &self.tree.topo;
        let leaf = &self.tree.leaf;
        let node = &topo.nodes[index];
        let span = node.span();
        let ctx = QueryLeafContext::new(ip_node, node.center_norm, self.q_norm);
        for pos in span.clone() {
            let lambda = self.state.lambda();
            if self.pruning.ball
                && point_ball_bound(ip_node, self.q_norm, f64::from(leaf.r_x[pos])) >= lambda
            {
                // r_x only shrinks from here on, so every later bound is at
                // least as large.
                if O::ENABLED {
                    for &id in &topo.ids[pos..span.end] {
                        self.observer.point_skipped(id, lambda);
                    }
                }
                return;
            }
            if self.pruning.cone
                && cone_bound(
                    ctx.q_cos,
                    ctx.q_sin,
                    f64::from(leaf.x_cos[pos]),
                    f64::from(leaf.x_sin[pos]),
                ) >= lambda
            {
                if O::ENABLED {
                    self.observer.point_skipped(topo.ids[pos], lambda);
                }
                continue;
            }
            let distance = inner_product(topo.point(pos), self.q).abs();
            self.state.verify(topo.ids[pos], distance);
            if self.state.is_halted() {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball_tree::BallTree;
    use crate::data::{gaussian_points, generate_queries};
    use crate::oracle::exact_topk;

    #[test]
    fn single_leaf_radii_descending() {
        let data = gaussian_points(6, 3, 8).unwrap();
        let tree = BcTree::build(&data, 10, 0).unwrap();
        assert_eq!(tree.num_nodes(), 1);
        let root = tree.node(0);
        let entries = tree.leaf_entries(0);
        for w in entries.windows(2) {
            assert!(w[0].r_x >= w[1].r_x);
        }
        for (e, &id) in entries.iter().zip(root.ids) {
            let r: f64 = data
                .row(id as usize)
                .iter()
                .zip(root.center)
                .map(|(&x, c)| (f64::from(x) - c).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((e.r_x - r).abs() <= 1e-6 * (1.0 + r));
            assert!(e.r_x >= r);
        }
    }

    #[test]
    fn matches_ball_tree_topology() {
        let data = gaussian_points(3000, 12, 8).unwrap();
        let ball = BallTree::build(&data, 50, 77).unwrap();
        let bc = BcTree::build(&data, 50, 77).unwrap();
        assert_eq!(ball.num_nodes(), bc.num_nodes());
        for i in 0..ball.num_nodes() {
            let (a, b) = (ball.node(i), bc.node(i));
            assert_eq!(a.size, b.size);
            assert_eq!(a.children, b.children);
            let mut ia = a.ids.to_vec();
            let mut ib = b.ids.to_vec();
            ia.sort();
            ib.sort();
            assert_eq!(ia, ib);
            for (x, y) in a.center.iter().zip(b.center) {
                assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn exact_top10_matches_oracle() {
        let data = gaussian_points(200, 7, 5).unwrap();
        let tree = BcTree::build(&data, 12, 3).unwrap();
        for q in generate_queries(&data, 20, 6).unwrap() {
            let got = tree.search(&q, &SearchParams::exact(10)).unwrap();
            let want = exact_topk(&data, &q, 10).unwrap();
            for (g, w) in got.neighbors.iter().zip(&want) {
                assert!((g.distance - w.distance).abs() <= 1e-6);
            }
        }
    }

    struct Skips(Vec<u32>);

    impl SearchObserver for Skips {
        fn point_skipped(&mut self, id: u32, _lambda: f64) {
            self.0.push(id);
        }
    }

    fn scan_leaf(
        tree: &BcTree,
        q: &HyperplaneQuery,
        seeded_lambda: Option<f64>,
    ) -> (u64, Vec<u32>) {
        let mut observer = Skips(Vec::new());
        let mut state = SearchState::new(1, crate::tree::Budget::Unlimited);
        if let Some(lambda) = seeded_lambda {
            state.verify(u32::MAX, lambda);
        }
        let mut search = BcSearch {
            tree,
            q: q.coeffs(),
            q_norm: q.norm(),
            preference: Preference::Center,
            pruning: LeafPruning::FULL,
            state,
            observer: &mut observer,
        };
        let ip = inner_product_f64(tree.topo.center(0), q.coeffs());
        search.scan_with_pruning(0, ip);
        let verified = search.state.counters.candidates_verified;
        (verified, observer.0)
    }

    #[test]
    fn infinite_lambda_verifies_whole_leaf() {
        let data = gaussian_points(40, 3, 5).unwrap();
        let tree = BcTree::build(&data, 40, 3).unwrap();
        let q = &generate_queries(&data, 1, 2).unwrap()[0];
        let (verified, skipped) = scan_leaf(&tree, q, None);
        // k = 1 fills after the first point, so only that one is guaranteed;
        // with k = n nothing can be pruned at all.
        assert!(verified >= 1);
        assert_eq!(verified as usize + skipped.len(), 40);
        let res = tree.search(q, &SearchParams::exact(40)).unwrap();
        assert_eq!(res.counters.candidates_verified, 40);
    }

    #[test]
    fn first_point_ball_failure_skips_leaf() {
        let data = gaussian_points(40, 3, 5).unwrap();
        let tree = BcTree::build(&data, 40, 3).unwrap();
        let q = &generate_queries(&data, 1, 2).unwrap()[0];
        // A pre-verified point at distance 0 makes every bound reach lambda.
        let (verified, skipped) = scan_leaf(&tree, q, Some(0.0));
        assert_eq!(verified, 1, "only the seeded point counts");
        assert_eq!(skipped.len(), 40);
        assert_eq!(skipped, tree.permutation().to_vec());
    }

    #[test]
    fn round_up_never_understates() {
        for v in [0.1f64, 1.0 / 3.0, 2.0f64.sqrt(), 1e-30, 12345.678901] {
            assert!(f64::from(round_up_f32(v)) >= v);
        }
        assert_eq!(round_up_f32(0.5), 0.5);
    }
}
