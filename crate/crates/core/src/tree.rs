//! Tree topology shared by Ball-Tree and BC-Tree, the seed-grow split, and
//! the per-query search state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PointSet;
use crate::error::{Error, Result};

/// Which child an internal node descends into first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Smaller `|<q, child.c>|` first.
    #[default]
    Center,
    /// Smaller node-level ball bound first.
    LowerBound,
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preference::Center => "center",
            Preference::LowerBound => "lower_bound",
        })
    }
}

impl FromStr for Preference {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "center" => Ok(Preference::Center),
            "lower_bound" | "lb" => Ok(Preference::LowerBound),
            other => Err(format!(
                "unknown preference '{other}' (expected center or lower_bound)"
            )),
        }
    }
}

/// Cap on full inner-product verifications per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Budget {
    #[default]
    Unlimited,
    Candidates(u64),
}

impl Budget {
    fn limit(self) -> u64 {
        match self {
            Budget::Unlimited => u64::MAX,
            Budget::Candidates(c) => c,
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Unlimited => f.write_str("inf"),
            Budget::Candidates(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub k: usize,
    pub budget: Budget,
    pub preference: Preference,
}

impl SearchParams {
    pub fn exact(k: usize) -> Self {
        SearchParams {
            k,
            budget: Budget::Unlimited,
            preference: Preference::Center,
        }
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_preference(mut self, preference: Preference) -> Self {
        self.preference = preference;
        self
    }
}

/// Per-query instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    /// Full `O(d)` inner products between the query and node centers.
    pub center_ip_count: u64,
    /// Full `O(d)` inner products between the query and data points.
    pub candidates_verified: u64,
    /// Nodes whose node-level bound was evaluated.
    pub nodes_visited: u64,
    /// Leaves whose points were scanned.
    pub leaves_scanned: u64,
}

impl AddAssign for Counters {
    fn add_assign(&mut self, rhs: Self) {
        self.center_ip_count += rhs.center_ip_count;
        self.candidates_verified += rhs.candidates_verified;
        self.nodes_visited += rhs.nodes_visited;
        self.leaves_scanned += rhs.leaves_scanned;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f64,
}

impl Neighbor {
    pub(crate) fn cmp_by_distance(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Ascending by `(distance, id)`.
    pub neighbors: Vec<Neighbor>,
    pub counters: Counters,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }
}

/// Common interface of every searchable index.
pub trait P2hIndex {
    fn search(
        &self,
        query: &crate::data::HyperplaneQuery,
        params: &SearchParams,
    ) -> Result<SearchResult>;

    /// Number of indexed points.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appended dimensionality.
    fn dim(&self) -> usize;
}

/// Hooks called at pruning decisions. Used by tests to check that nothing
/// closer than the current threshold is ever discarded.
pub trait SearchObserver {
    const ENABLED: bool = true;

    /// A subtree was cut off because its node-level bound reached `lambda`.
    fn node_pruned(&mut self, _node: usize, _lambda: f64) {}

    /// A leaf point was skipped by a point-level bound.
    fn point_skipped(&mut self, _id: u32, _lambda: f64) {}
}

pub struct NoopObserver;

impl SearchObserver for NoopObserver {
    const ENABLED: bool = false;
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_by_distance(&other.0)
    }
}

/// Bounded max-heap of the best `k` verified points, the pruning threshold
/// `lambda`, the candidate budget and the counters of one query.
#[derive(Debug)]
pub struct SearchState {
    k: usize,
    heap: BinaryHeap<HeapEntry>,
    lambda: f64,
    budget: u64,
    halted: bool,
    pub counters: Counters,
}

impl SearchState {
    pub fn new(k: usize, budget: Budget) -> Self {
        SearchState {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            lambda: f64::INFINITY,
            budget: budget.limit(),
            halted: budget.limit() == 0,
            counters: Counters::default(),
        }
    }

    /// The k-th smallest verified distance, or `+inf` while fewer than `k`
    /// points have been verified.
    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True once the candidate budget has been spent.
    #[inline]
    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Records one full verification of point `id` at `distance`.
    #[inline]
    pub fn verify(&mut self, id: u32, distance: f64) {
        self.counters.candidates_verified += 1;
        if distance < self.lambda {
            if self.heap.len() == self.k {
                self.heap.pop();
            }
            self.heap.push(HeapEntry(Neighbor { id, distance }));
            if self.heap.len() == self.k {
                self.lambda = self.heap.peek().map_or(f64::INFINITY, |e| e.0.distance);
            }
        }
        if self.counters.candidates_verified >= self.budget {
            self.halted = true;
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn into_result(self) -> SearchResult {
        let mut neighbors: Vec<Neighbor> = self.heap.into_iter().map(|e| e.0).collect();
        neighbors.sort_by(Neighbor::cmp_by_distance);
        SearchResult {
            neighbors,
            counters: self.counters,
        }
    }
}

pub(crate) fn check_search_args(
    n: usize,
    dim: usize,
    query: &crate::data::HyperplaneQuery,
    k: usize,
) -> Result<()> {
    if query.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: query.dim(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    /// Offset of the node's first point in the permuted order.
    pub start: u32,
    pub size: u32,
    pub radius: f64,
    pub center_norm: f64,
    /// Index of the right child; 0 marks a leaf since the root is never a
    /// right child. The left child of an internal node is always `self + 1`.
    pub right: u32,
}

impl Node {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.right == 0
    }

    #[inline]
    pub fn span(&self) -> std::ops::Range<usize> {
        self.start as usize..(self.start + self.size) as usize
    }
}

/// Read-only view of a node for inspection.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub index: usize,
    pub center: &'a [f64],
    pub center_norm: f64,
    pub radius: f64,
    pub size: usize,
    /// Point ids under this node, in stored order.
    pub ids: &'a [u32],
    /// `(left, right)` for internal nodes.
    pub children: Option<(usize, usize)>,
}

impl NodeView<'_> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Pre-order node array plus the permuted point storage.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Topology {
    pub dim: usize,
    pub leaf_size: usize,
    pub seed: u64,
    pub nodes: Vec<Node>,
    pub centers: Vec<f64>,
    /// Point ids in stored order; every leaf is a contiguous span.
    pub ids: Vec<u32>,
    /// Rows of the point set gathered in `ids` order.
    pub points: Vec<f32>,
}

impl Topology {
    #[inline]
    pub fn center(&self, node: usize) -> &[f64] {
        &self.centers[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    pub fn point(&self, pos: usize) -> &[f32] {
        &self.points[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn view(&self, index: usize) -> NodeView<'_> {
        let node = &self.nodes[index];
        NodeView {
            index,
            center: self.center(index),
            center_norm: node.center_norm,
            radius: node.radius,
            size: node.size as usize,
            ids: &self.ids[node.span()],
            children: (!node.is_leaf()).then(|| (index + 1, node.right as usize)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                1
            } else {
                1 + walk(nodes, i + 1).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    /// Gathers point rows from `data` in `ids` order.
    pub fn gather_points(data: &PointSet, ids: &[u32]) -> Vec<f32> {
        let mut points = Vec::with_capacity(ids.len() * data.dim());
        for &id in ids {
            points.extend_from_slice(data.row(id as usize));
        }
        points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CenterRule {
    /// Every node's center is the mean of its points.
    Mean,
    /// Leaf centers are means; internal centers are size-weighted sums of
    /// the children's centers. Leaf radii are left at 0 for the caller, who
    /// makes its own pass over leaf points anyway.
    FromChildren,
}

/// `||a - b||^2` in `f64` with four independent accumulators.
#[inline]
fn squared_distance_with<T: Copy + Into<f64>>(a: &[f32], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq = |x: f32, y: T| {
        let t = f64::from(x) - y.into();
        t * t
    };
    let mut acc = [0.0f64; 4];
    let xs = a.chunks_exact(4);
    let ys = b.chunks_exact(4);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (x, y) in xs.zip(ys) {
        acc[0] += sq(x[0], y[0]);
        acc[1] += sq(x[1], y[1]);
        acc[2] += sq(x[2], y[2]);
        acc[3] += sq(x[3], y[3]);
    }
    let tail: f64 = xr.iter().zip(yr).map(|(&x, &y)| sq(x, y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    squared_distance_with(a, b)
}

#[inline]
fn squared_distance_to_center(a: &[f32], c: &[f64]) -> f64 {
    squared_distance_with(a, c)
}

/// Index of the point in `ids` with the largest `dist`, lowest id on ties.
fn argmax_lowest_id(ids: &[u32], dist: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..ids.len() {
        let better = dist[i] > dist[best] || (dist[i] == dist[best] && ids[i] < ids[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Seed-grow pivot selection: a random seed point `v`, then the point
/// farthest from `v`, then the point farthest from that.
pub fn split<R: Rng + ?Sized>(data: &PointSet, ids: &[u32], rng: &mut R) -> Result<(u32, u32)> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput("split needs at least 2 points".into()));
    }
    let seed_point = ids[rng.random_range(0..ids.len())];
    let mut dist = Vec::new();
    Ok(split_from(data, ids, seed_point, &mut dist))
}

/// [`split`] with an explicit seed point. Leaves the squared distances to
/// the left pivot in `dist_to_left`.
pub(crate) fn split_from(
    data: &PointSet,
    ids: &[u32],
    seed_point: u32,
    dist_to_left: &mut Vec<f64>,
) -> (u32, u32) {
    let rows = Topology::gather_points(data, ids);
    let seed_pos = ids
        .iter()
        .position(|&id| id == seed_point)
        .expect("seed point in ids");
    let (l, r) = pivots(&rows, data.dim(), ids, seed_pos, dist_to_left);
    (ids[l], ids[r])
}

/// Pivot positions for `rows` (row `i` belongs to `ids[i]`), starting from
/// the row at `seed_pos`.
fn pivots(
    rows: &[f32],
    dim: usize,
    ids: &[u32],
    seed_pos: usize,
    dist: &mut Vec<f64>,
) -> (usize, usize) {
    let farthest_from = |pos: usize, dist: &mut Vec<f64>| {
        let v = &rows[pos * dim..(pos + 1) * dim];
        dist.clear();
        dist.extend(rows.chunks_exact(dim).map(|x| squared_distance(x, v)));
        argmax_lowest_id(ids, dist)
    };
    let left = farthest_from(seed_pos, dist);
    // The second pass leaves distances to the left pivot in `dist`.
    let right = farthest_from(left, dist);
    (left, right)
}

pub(crate) fn build_topology(
    data: &PointSet,
    leaf_size: usize,
    seed: u64,
    rule: CenterRule,
) -> Result<Topology> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if leaf_size == 0 {
        return Err(Error::InvalidInput("leaf size must be at least 1".into()));
    }
    if data.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("more than 2^32 - 1 points".into()));
    }
    let mut builder = Builder {
        dim: data.dim(),
        leaf_size,
        rule,
        rng: ChaCha8Rng::seed_from_u64(seed),
        ids: (0..data.len() as u32).collect(),
        points: data.as_slice().to_vec(),
        nodes: Vec::new(),
        centers: Vec::new(),
        dist: Vec::new(),
        spill_ids: Vec::new(),
        spill_rows: Vec::new(),
    };
    builder.build(0, data.len());
    let Builder {
        ids,
        points,
        nodes,
        centers,
        ..
    } = builder;
    Ok(Topology {
        dim: data.dim(),
        leaf_size,
        seed,
        nodes,
        centers,
        ids,
        points,
    })
}

/// Recursive builder. Rows are moved together with their ids so every pass
/// over a node reads contiguous memory.
struct Builder {
    dim: usize,
    leaf_size: usize,
    rule: CenterRule,
    rng: ChaCha8Rng,
    ids: Vec<u32>,
    points: Vec<f32>,
    nodes: Vec<Node>,
    centers: Vec<f64>,
    dist: Vec<f64>,
    spill_ids: Vec<u32>,
    spill_rows: Vec<f32>,
}

impl Builder {
    fn rows(&self, start: usize, end: usize) -> &[f32] {
        &self.points[start * self.dim..end * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let index = self.nodes.len();
        let size = end - start;
        self.nodes.push(Node {
            start: start as u32,
            size: size as u32,
            radius: 0.0,
            center_norm: 0.0,
            right: 0,
        });
        self.centers.resize(self.centers.len() + self.dim, 0.0);

        let is_leaf = size <= self.leaf_size;
        if is_leaf || self.rule == CenterRule::Mean {
            self.mean_center(index, start, end);
        }
        if !is_leaf {
            let mid = self.partition(start, end);
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            debug_assert_eq!(left, index + 1);
            self.nodes[index].right = right as u32;
            if self.rule == CenterRule::FromChildren {
                self.combine_centers(index, left, right);
            }
        }

        let center = &self.centers[index * self.dim..(index + 1) * self.dim];
        let center_norm = center.iter().map(|c| c * c).sum::<f64>().sqrt();
        let radius = if is_leaf && self.rule == CenterRule::FromChildren {
            0.0
        } else {
            self.rows(start, end)
                .chunks_exact(self.dim)
                .map(|x| squared_distance_to_center(x, center))
                .fold(0.0f64, f64::max)
                .sqrt()
        };
        let node = &mut self.nodes[index];
        node.radius = radius;
        node.center_norm = center_norm;
        index
    }

    fn mean_center(&mut self, index: usize, start: usize, end: usize) {
        let dim = self.dim;
        let center = &mut self.centers[index * dim..(index + 1) * dim];
        for row in self.points[start * dim..end * dim].chunks_exact(dim) {
            for (c, &x) in center.iter_mut().zip(row) {
                *c += f64::from(x);
            }
        }
        let inv = (end - start) as f64;
        center.iter_mut().for_each(|c| *c /= inv);
    }

    fn combine_centers(&mut self, index: usize, left: usize, right: usize) {
        let dim = self.dim;
        let n = self.nodes[index].size as f64;
        let nl = self.nodes[left].size as f64;
        let nr = self.nodes[right].size as f64;
        for j in 0..dim {
            let cl = self.centers[left * dim + j];
            let cr = self.centers[right * dim + j];
            self.centers[index * dim + j] = (nl * cl + nr * cr) / n;
        }
    }

    /// Splits `ids[start..end]` in place around two pivots and returns the
    /// boundary. Points go left when `||x - x_l|| <= ||x - x_r||`; relative
    /// order is kept on both sides.
    fn partition(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let seed_pos = self.rng.random_range(0..end - start);
        let (left, right) = pivots(
            &self.points[start * dim..end * dim],
            dim,
            &self.ids[start..end],
            seed_pos,
            &mut self.dist,
        );
        // self.dist now holds squared distances to the left pivot.
        let spread = self.dist.iter().copied().fold(0.0f64, f64::max);
        if left == right || spread == 0.0 {
            // All points coincide; halve by position so recursion terminates.
            return start + (end - start) / 2;
        }
        let right_row = (start + right) * dim;
        let xr: Vec<f32> = self.points[right_row..right_row + dim].to_vec();
        self.spill_ids.clear();
        self.spill_rows.clear();
        let mut write = start;
        for i in 0..end - start {
            let pos = start + i;
            let row = pos * dim..(pos + 1) * dim;
            let to_right = squared_distance(&self.points[row.clone()], &xr);
            if self.dist[i] <= to_right {
                if write != pos {
                    self.ids[write] = self.ids[pos];
                    self.points.copy_within(row, write * dim);
                }
                write += 1;
            } else {
                self.spill_ids.push(self.ids[pos]);
                self.spill_rows.extend_from_slice(&self.points[row]);
            }
        }
        self.ids[write..end].copy_from_slice(&self.spill_ids);
        self.points[write * dim..end * dim].copy_from_slice(&self.spill_rows);
        write
    }
}
