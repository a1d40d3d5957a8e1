//! Brute-force exact search, recall, and the on-disk ground-truth cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bounds::inner_product;
use crate::data::{fingerprint_queries, HyperplaneQuery, PointSet};
use crate::error::{Error, Result};
use crate::tree::{check_search_args, Counters, Neighbor, P2hIndex, SearchParams, SearchResult};

/// Distance slack under which a returned point ties with the k-th true one.
pub const RECALL_TIE_TOLERANCE: f64 = 1e-6;

/// The `k` smallest `|<x, q>|`, ascending by `(distance, id)`.
pub fn exact_topk(data: &PointSet, query: &HyperplaneQuery, k: usize) -> Result<Vec<Neighbor>> {
    check_search_args(data.len(), data.dim(), query, k)?;
    let q = query.coeffs();
    let mut all: Vec<Neighbor> = data
        .rows()
        .enumerate()
        .map(|(id, x)| Neighbor {
            id: id as u32,
            distance: inner_product(x, q).abs(),
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, Neighbor::cmp_by_distance);
        all.truncate(k);
    }
    all.sort_by(Neighbor::cmp_by_distance);
    Ok(all)
}

/// Fraction of the true top-`k` recovered by `result`.
///
/// A returned point outside `truth` still counts when its distance ties with
/// the k-th true distance within [`RECALL_TIE_TOLERANCE`].
pub fn recall(result: &[Neighbor], truth: &[Neighbor], k: usize) -> Result<f64> {
    if truth.is_empty() || k == 0 {
        return Err(Error::MissingGroundTruth("empty ground truth".into()));
    }
    if truth.len() < k {
        return Err(Error::MissingGroundTruth(format!(
            "ground truth holds {} neighbors, k = {k}",
            truth.len()
        )));
    }
    let truth = &truth[..k];
    let kth = truth[k - 1].distance;
    let hits = result
        .iter()
        .take(k)
        .filter(|r| {
            truth.iter().any(|t| t.id == r.id) || (r.distance - kth).abs() <= RECALL_TIE_TOLERANCE
        })
        .count();
    Ok(hits.min(k) as f64 / k as f64)
}

/// Exhaustive scan wrapped as an index, for benchmarking alongside the trees.
#[derive(Debug, Clone)]
pub struct ExhaustiveIndex<'a> {
    data: &'a PointSet,
}

impl<'a> ExhaustiveIndex<'a> {
    pub fn new(data: &'a PointSet) -> Self {
        ExhaustiveIndex { data }
    }
}

impl P2hIndex for ExhaustiveIndex<'_> {
    fn search(&self, query: &HyperplaneQuery, params: &SearchParams) -> Result<SearchResult> {
        let neighbors = exact_topk(self.data, query, params.k)?;
        Ok(SearchResult {
            neighbors,
            counters: Counters {
                candidates_verified: self.data.len() as u64,
                ..Counters::default()
            },
        })
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }
}

const GT_MAGIC: &[u8; 4] = b"P2HG";
const GT_VERSION: u32 = 1;

/// Exact top-`k_max` answers for a query list.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Neighbors per query, `min(k_max, n)` each.
    pub k_max: usize,
    pub neighbors: Vec<Vec<Neighbor>>,
    pub data_fingerprint: u64,
    pub query_fingerprint: u64,
}

impl GroundTruth {
    pub fn compute(data: &PointSet, queries: &[HyperplaneQuery], k_max: usize) -> Result<Self> {
        let k = k_max.min(data.len());
        let neighbors = queries
            .par_iter()
            .map(|q| exact_topk(data, q, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            k_max: k,
            neighbors,
            data_fingerprint: data.fingerprint(),
            query_fingerprint: fingerprint_queries(queries),
        })
    }

    /// Truth for query `i` truncated to `k`.
    pub fn top(&self, i: usize, k: usize) -> Result<&[Neighbor]> {
        if k > self.k_max {
            return Err(Error::MissingGroundTruth(format!(
                "k = {k} exceeds cached k_max = {}",
                self.k_max
            )));
        }
        self.neighbors
            .get(i)
            .map(|v| &v[..k])
            .ok_or_else(|| Error::MissingGroundTruth(format!("no ground truth for query {i}")))
    }

    /// `[magic "P2HG"][u32 version][u32 k_max][u32 query count]` followed by
    /// `k_max` `(u32 id, f32 distance)` pairs per query, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.neighbors.len() * self.k_max * 8);
        out.extend_from_slice(GT_MAGIC);
        out.extend_from_slice(&GT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k_max as u32).to_le_bytes());
        out.extend_from_slice(&(self.neighbors.len() as u32).to_le_bytes());
        for row in &self.neighbors {
            for n in row {
                out.extend_from_slice(&n.id.to_le_bytes());
                out.extend_from_slice(&(n.distance as f32).to_le_bytes());
            }
        }
        out
    }

    /// Decodes a cache file; fingerprints are not part of the payload and
    /// are supplied by the caller.
    pub fn decode(bytes: &[u8], data_fingerprint: u64, query_fingerprint: u64) -> Result<Self> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::malformed("P2HG", "truncated header"))
        };
        if bytes.get(..4) != Some(GT_MAGIC.as_slice()) {
            return Err(Error::malformed("P2HG", "bad magic"));
        }
        let version = word(4)?;
        if version != GT_VERSION {
            return Err(Error::malformed(
                "P2HG",
                format!("unsupported version {version}"),
            ));
        }
        let k_max = word(8)? as usize;
        let count = word(12)? as usize;
        let expected = 16 + count * k_max * 8;
        if bytes.len() != expected {
            return Err(Error::malformed(
                "P2HG",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut neighbors = Vec::with_capacity(count);
        let mut at = 16;
        for _ in 0..count {
            let mut row = Vec::with_capacity(k_max);
            for _ in 0..k_max {
                let id = word(at)?;
                let distance = f32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
                row.push(Neighbor {
                    id,
                    distance: f64::from(distance),
                });
                at += 8;
            }
            neighbors.push(row);
        }
        Ok(GroundTruth {
            k_max,
            neighbors,
            data_fingerprint,
            query_fingerprint,
        })
    }
}

/// Directory of ground-truth files keyed by dataset fingerprint, query seed,
/// query count and `k_max`.
#[derive(Debug, Clone)]
pub struct GroundTruthCache {
    dir: PathBuf,
}

/// Whether [`GroundTruthCache::load_or_compute`] reused an existing file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

impl GroundTruthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        GroundTruthCache { dir: dir.into() }
    }

    pub fn path_for(
        &self,
        data_fingerprint: u64,
        query_seed: u64,
        query_count: usize,
        k_max: usize,
    ) -> PathBuf {
        self.dir.join(format!(
            "gt-{data_fingerprint:016x}-s{query_seed}-q{query_count}-k{k_max}.p2hg"
        ))
    }

    pub fn load_or_compute(
        &self,
        data: &PointSet,
        data_fingerprint: u64,
        queries: &[HyperplaneQuery],
        query_seed: u64,
        k_max: usize,
    ) -> Result<(GroundTruth, CacheStatus, PathBuf)> {
        let path = self.path_for(data_fingerprint, query_seed, queries.len(), k_max);
        let query_fingerprint = fingerprint_queries(queries);
        if path.exists() {
            let bytes = fs::read(&path)?;
            let gt = GroundTruth::decode(&bytes, data_fingerprint, query_fingerprint)?;
            if gt.neighbors.len() == queries.len() && gt.k_max == k_max.min(data.len()) {
                return Ok((gt, CacheStatus::Hit, path));
            }
        }
        let mut gt = GroundTruth::compute(data, queries, k_max)?;
        gt.data_fingerprint = data_fingerprint;
        fs::create_dir_all(&self.dir)?;
        write_atomic(&path, &gt.encode())?;
        Ok((gt, CacheStatus::Miss, path))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_points, generate_queries, normalize_query};

    /// Independent top-k: naive double loop over the rows with a plain
    /// sequential f64 dot product and repeated minimum extraction.
    fn naive_topk(data: &PointSet, q: &HyperplaneQuery, k: usize) -> Vec<(u32, f64)> {
        let mut dist = Vec::new();
        for i in 0..data.len() {
            let mut s = 0.0f64;
            for j in 0..data.dim() {
                s += f64::from(data.row(i)[j]) * q.coeffs()[j];
            }
            dist.push(s.abs());
        }
        let mut taken = vec![false; data.len()];
        let mut out = Vec::new();
        for _ in 0..k {
            let mut best = usize::MAX;
            for i in 0..data.len() {
                if !taken[i] && (best == usize::MAX || dist[i] < dist[best]) {
                    best = i;
                }
            }
            taken[best] = true;
            out.push((best as u32, dist[best]));
        }
        out
    }

    #[test]
    fn on_hyperplane_point_is_nearest() {
        let data = PointSet::from_rows(&[[0.0f32, 0.0], [1.0, 0.0]]).unwrap();
        let q = normalize_query(&[1.0, 0.0, 0.0]).unwrap();
        let top = exact_topk(&data, &q, 1).unwrap();
        assert_eq!(top[0].id, 0);
        assert_eq!(top[0].distance, 0.0);
    }

    #[test]
    fn k_equals_n_ranks_everything() {
        let data = gaussian_points(30, 3, 1).unwrap();
        let q = &generate_queries(&data, 1, 1).unwrap()[0];
        let top = exact_topk(&data, q, 30).unwrap();
        let mut ids: Vec<u32> = top.iter().map(|n| n.id).collect();
        assert!(top.windows(2).all(|w| w[0].distance <= w[1].distance));
        ids.sort();
        assert_eq!(ids, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn matches_naive_double_loop() {
        let data = gaussian_points(100, 4, 2).unwrap();
        for q in generate_queries(&data, 10, 3).unwrap() {
            let fast = exact_topk(&data, &q, 10).unwrap();
            let slow = naive_topk(&data, &q, 10);
            for (a, (id, d)) in fast.iter().zip(slow) {
                assert!((a.distance - d).abs() < 1e-12);
                assert_eq!(a.id, id);
            }
        }
    }

    #[test]
    fn k_out_of_range() {
        let data = gaussian_points(5, 3, 1).unwrap();
        let q = &generate_queries(&data, 1, 1).unwrap()[0];
        assert!(matches!(
            exact_topk(&data, q, 0),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            exact_topk(&data, q, 6),
            Err(Error::KOutOfRange { .. })
        ));
    }

    fn nb(id: u32, distance: f64) -> Neighbor {
        Neighbor { id, distance }
    }

    #[test]
    fn recall_counting() {
        let truth: Vec<Neighbor> = (0..10).map(|i| nb(i, i as f64)).collect();
        assert_eq!(recall(&truth, &truth, 10).unwrap(), 1.0);
        let disjoint: Vec<Neighbor> = (100..110).map(|i| nb(i, 50.0 + i as f64)).collect();
        assert_eq!(recall(&disjoint, &truth, 10).unwrap(), 0.0);
        let mut partial: Vec<Neighbor> = truth[..7].to_vec();
        partial.extend((100..103).map(|i| nb(i, 20.0)));
        assert!((recall(&partial, &truth, 10).unwrap() - 0.7).abs() < 1e-12);
        assert!(recall(&truth, &[], 10).is_err());
    }

    #[test]
    fn recall_counts_ties_at_kth_distance() {
        let truth = vec![nb(0, 0.1), nb(1, 0.5)];
        let result = vec![nb(0, 0.1), nb(7, 0.5 + 1e-7)];
        assert_eq!(recall(&result, &truth, 2).unwrap(), 1.0);
    }

    #[test]
    fn ground_truth_round_trip() {
        let data = gaussian_points(50, 3, 1).unwrap();
        let queries = generate_queries(&data, 4, 1).unwrap();
        let gt = GroundTruth::compute(&data, &queries, 5).unwrap();
        let bytes = gt.encode();
        assert_eq!(&bytes[..4], b"P2HG");
        assert_eq!(bytes.len(), 16 + 4 * 5 * 8);
        let back = GroundTruth::decode(&bytes, gt.data_fingerprint, gt.query_fingerprint).unwrap();
        assert_eq!(back.encode(), bytes);
        for (a, b) in back
            .neighbors
            .iter()
            .flatten()
            .zip(gt.neighbors.iter().flatten())
        {
            assert_eq!(a.id, b.id);
            assert!((a.distance - b.distance).abs() < 1e-6 * (1.0 + b.distance));
        }
        assert!(GroundTruth::decode(&bytes[..20], 0, 0).is_err());
    }
}
