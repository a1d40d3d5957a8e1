//! Exact and budgeted point-to-hyperplane nearest neighbor search.
//!
//! Data points `p` are lifted to `x = (p; 1)` and hyperplane queries are
//! rescaled to a unit normal, so the distance from `p` to the hyperplane is
//! `|<x, q>|`. Two tree indexes answer top-k queries under that distance:
//!
//! * [`BallTree`]: depth-first branch-and-bound with a node-level ball bound.
//! * [`BcTree`]: the same tree plus per-point ball and cone bounds in the
//!   leaves, and child center inner products derived in `O(1)` from the
//!   parent's.
//!
//! [`oracle::exact_topk`] is the brute-force reference.

pub mod ball_tree;
pub mod bc_tree;
pub mod bench;
pub mod bounds;
pub mod data;
pub mod error;
pub mod index;
pub mod oracle;
pub mod tree;

pub use ball_tree::BallTree;
pub use bc_tree::{BcTree, LeafPruning};
pub use data::{
    append_dimension, gaussian_points, generate_queries, load_vectors, normalize_query,
    HyperplaneQuery, PointSet, VectorFormat,
};
pub use error::{Error, Result};
pub use index::{AnyTree, IndexHeader, TreeKind};
pub use oracle::{exact_topk, recall, GroundTruth};
pub use tree::{
    split, Budget, Counters, Neighbor, NodeView, P2hIndex, Preference, SearchObserver,
    SearchParams, SearchResult, SearchState,
};
