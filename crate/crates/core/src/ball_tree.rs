//! Ball-Tree with depth-first branch-and-bound search under the node-level
//! ball bound.

use crate::bounds::{inner_product, inner_product_f64, node_ball_bound};
use crate::data::{HyperplaneQuery, PointSet};
use crate::error::Result;
use crate::tree::{
    build_topology, check_search_args, CenterRule, NodeView, NoopObserver, P2hIndex, Preference,
    SearchObserver, SearchParams, SearchResult, SearchState, Topology,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BallTree {
    pub(crate) topo: Topology,
}

impl BallTree {
    /// Builds the tree recursively until every leaf holds at most
    /// `leaf_size` points. Deterministic given `seed`.
    pub fn build(data: &PointSet, leaf_size: usize, seed: u64) -> Result<Self> {
        let topo = build_topology(data, leaf_size, seed, CenterRule::Mean)?;
        Ok(BallTree { topo })
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

    /// Point ids in stored order.
    pub fn permutation(&self) -> &[u32] {
        &self.topo.ids
    }

    /// Search with pruning hooks.
    pub fn search_observed<O: SearchObserver>(
        &self,
        query: &HyperplaneQuery,
        params: &SearchParams,
        observer: &mut O,
    ) -> Result<SearchResult> {
        check_search_args(self.topo.len(), self.topo.dim, query, params.k)?;
        let mut search = BallSearch {
            topo: &self.topo,
            q: query.coeffs(),
            q_norm: query.norm(),
            preference: params.preference,
            state: SearchState::new(params.k, params.budget),
            observer,
        };
        let ip_root = inner_product_f64(self.topo.center(0), search.q);
        search.state.counters.center_ip_count += 1;
        search.visit(0, ip_root);
        Ok(search.state.into_result())
    }
}

impl P2hIndex for BallTree {
    fn search(&self, query: &HyperplaneQuery, params: &SearchParams) -> Result<SearchResult> {
        self.search_observed(query, params, &mut NoopObserver)
    }

    fn len(&self) -> usize {
        self.topo.len()
    }

    fn dim(&self) -> usize {
        self.topo.dim
    }
}

struct BallSearch<'a, O> {
    topo: &'a Topology,
    q: &'a [f64],
    q_norm: f64,
    preference: Preference,
    state: SearchState,
    observer: &'a mut O,
}

impl<O: SearchObserver> BallSearch<'_, O> {
    /// `ip` is `<q, N.c>`, computed by the caller.
    fn visit(&mut self, index: usize, ip: f64) {
        if self.state.is_halted() {
            return;
        }
        self.state.counters.nodes_visited += 1;
        let node = &self.topo.nodes[index];
        let lb = node_ball_bound(ip, self.q_norm, node.radius);
        if lb >= self.state.lambda() {
            if O::ENABLED {
                self.observer.node_pruned(index, self.state.lambda());
            }
            return;
        }
        if node.is_leaf() {
            self.exhaustive_scan(index);
            return;
        }
        let (left, right) = (index + 1, node.right as usize);
        let ip_left = inner_product_f64(self.topo.center(left), self.q);
        let ip_right = inner_product_f64(self.topo.center(right), self.q);
        self.state.counters.center_ip_count += 2;

        let left_first = match self.preference {
            Preference::Center => ip_left.abs() <= ip_right.abs(),
            Preference::LowerBound => {
                let nodes = &self.topo.nodes;
                node_ball_bound(ip_left, self.q_norm, nodes[left].radius)
                    <= node_ball_bound(ip_right, self.q_norm, nodes[right].radius)
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

    fn exhaustive_scan(&mut self, index: usize) {
        self.state.counters.leaves_scanned += 1;
        for pos in self.topo.nodes[index].span() {
            let distance = inner_product(self.topo.point(pos), self.q).abs();
            self.state.verify(self.topo.ids[pos], distance);
            if self.state.is_halted() {
                return;
            }
        }
    }
}
