//! Point-to-hyperplane distance, the node- and point-level lower bounds used
//! for pruning, and the center-linearity identity for child inner products.
//!
//! Everything here is a pure function over scalars or slices.

use crate::data::HyperplaneQuery;
use crate::error::{Error, Result};

/// `<x, q>` for an `f32` row against `f64` coefficients, accumulated in `f64`.
///
/// Every index (and the exhaustive oracle) goes through this one routine so
/// that a point verified by different searches always gets the same distance.
#[inline]
pub fn inner_product(x: &[f32], q: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), q.len());
    let mut acc = [0.0f64; 4];
    let xs = x.chunks_exact(4);
    let qs = q.chunks_exact(4);
    let (xr, qr) = (xs.remainder(), qs.remainder());
    for (a, b) in xs.zip(qs) {
        acc[0] += f64::from(a[0]) * b[0];
        acc[1] += f64::from(a[1]) * b[1];
        acc[2] += f64::from(a[2]) * b[2];
        acc[3] += f64::from(a[3]) * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(qr) {
        tail += f64::from(*a) * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `<c, q>` for `f64` centers.
#[inline]
pub fn inner_product_f64(c: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(c.len(), q.len());
    let mut acc = [0.0f64; 4];
    let cs = c.chunks_exact(4);
    let qs = q.chunks_exact(4);
    let (cr, qr) = (cs.remainder(), qs.remainder());
    for (a, b) in cs.zip(qs) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in cr.iter().zip(qr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// The simplified point-to-hyperplane distance `|<x, q>|`.
pub fn p2h_distance(x: &[f32], q: &HyperplaneQuery) -> Result<f64> {
    if x.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            actual: x.len(),
        });
    }
    Ok(inner_product(x, q.coeffs()).abs())
}

/// Lower bound on `|<x, q>|` over every `x` inside the ball
/// `{x : ||x - c|| <= radius}`, given `ip_qc = <q, c>`.
#[inline]
pub fn node_ball_bound(ip_qc: f64, q_norm: f64, radius: f64) -> f64 {
    (ip_qc.abs() - q_norm * radius).max(0.0)
}

/// Per-point variant of [`node_ball_bound`] where the radius is the point's
/// own distance to the leaf center. Non-increasing in `r_x`.
#[inline]
pub fn point_ball_bound(ip_qc: f64, q_norm: f64, r_x: f64) -> f64 {
    node_ball_bound(ip_qc, q_norm, r_x)
}

/// Per-point cone description relative to a leaf center `c`:
/// `x_cos = ||x|| cos(phi)`, `x_sin = ||x|| sin(phi)` where `phi` is the angle
/// between `x` and `c`, and `r_x = ||x - c||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeEntry {
    pub x_cos: f64,
    pub x_sin: f64,
    pub r_x: f64,
}

impl ConeEntry {
    /// Builds an entry from `||x||^2`, `<x, c>`, `||c||` and `||x - c||`.
    ///
    /// When `x` or `c` is the origin, or `x` sits on the center, the angle is
    /// undefined and the entry is stored as `phi = 0`.
    pub fn from_parts(x_norm_sq: f64, ip_xc: f64, center_norm: f64, r_x: f64) -> Self {
        let x_norm = x_norm_sq.max(0.0).sqrt();
        let denom = x_norm * center_norm;
        if denom == 0.0 || r_x == 0.0 {
            return ConeEntry {
                x_cos: x_norm,
                x_sin: 0.0,
                r_x,
            };
        }
        let cos = (ip_xc / denom).clamp(-1.0, 1.0);
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        ConeEntry {
            x_cos: x_norm * cos,
            x_sin: x_norm * sin,
            r_x,
        }
    }

    /// Builds an entry directly from the geometry of `x` and `c`.
    pub fn from_geometry(x: &[f64], center: &[f64]) -> Self {
        let x_norm_sq = x.iter().map(|v| v * v).sum::<f64>();
        let ip = inner_product_f64(x, center);
        let center_norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r_x = x
            .iter()
            .zip(center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Self::from_parts(x_norm_sq, ip, center_norm, r_x)
    }
}

/// Query-side quantities shared by every point of one leaf:
/// `q_cos = ||q|| cos(theta)` and `q_sin = ||q|| sin(theta)` where `theta` is
/// the angle between `q` and the leaf center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryLeafContext {
    pub ip_node: f64,
    pub q_cos: f64,
    pub q_sin: f64,
    pub q_norm: f64,
}

impl QueryLeafContext {
    #[inline]
    pub fn new(ip_node: f64, center_norm: f64, q_norm: f64) -> Self {
        // theta is undefined for a center at the origin; q_cos = 0 makes the
        // cone bound collapse to 0.
        let q_cos = if center_norm > 0.0 {
            ip_node / center_norm
        } else {
            0.0
        };
        let q_sin = (q_norm * q_norm - q_cos * q_cos).max(0.0).sqrt();
        QueryLeafContext {
            ip_node,
            q_cos,
            q_sin,
            q_norm,
        }
    }
}

/// Lower bound on `|<x, q>|` from the cone around the leaf center.
///
/// With `a = q_cos * x_cos` and `b = q_sin * x_sin`, `a - b` is
/// `||x|| ||q|| cos(theta + phi)` and `a + b` is `||x|| ||q|| cos(|theta - phi|)`.
#[inline]
pub fn point_cone_bound(ctx: &QueryLeafContext, entry: &ConeEntry) -> f64 {
    cone_bound(ctx.q_cos, ctx.q_sin, entry.x_cos, entry.x_sin)
}

#[inline]
pub(crate) fn cone_bound(q_cos: f64, q_sin: f64, x_cos: f64, x_sin: f64) -> f64 {
    let a = q_cos * x_cos;
    let b = q_sin * x_sin;
    let lower = a - b;
    if lower > 0.0 && q_cos > 0.0 && x_cos > 0.0 {
        return lower;
    }
    let upper = a + b;
    if upper < 0.0 {
        -upper
    } else {
        0.0
    }
}

/// `<q, right.c>` from `<q, parent.c>` and `<q, left.c>`, using
/// `|N| c = |L| c_L + |R| c_R`.
pub fn child_ip(
    ip_parent: f64,
    ip_left: f64,
    n: usize,
    n_left: usize,
    n_right: usize,
) -> Result<f64> {
    if n_left.checked_add(n_right) != Some(n) {
        return Err(Error::Invariant(format!(
            "child sizes {n_left} + {n_right} do not add up to {n}"
        )));
    }
    if n_right == 0 {
        return Err(Error::Invariant("right child is empty".into()));
    }
    Ok(child_ip_unchecked(ip_parent, ip_left, n, n_left, n_right))
}

#[inline]
pub(crate) fn child_ip_unchecked(
    ip_parent: f64,
    ip_left: f64,
    n: usize,
    n_left: usize,
    n_right: usize,
) -> f64 {
    (n as f64 * ip_parent - n_left as f64 * ip_left) / n_right as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize_query;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Dense sampling of the ball boundary and interior in 2-D; the minimum of
    /// `|<x, q>|` over a ball is attained on its boundary.
    fn sampled_min_2d(center: [f64; 2], radius: f64, q: [f64; 2]) -> f64 {
        let steps = 100_000;
        let mut best = f64::INFINITY;
        for i in 0..steps {
            let t = i as f64 / steps as f64 * std::f64::consts::TAU;
            for scale in [1.0, 0.5, 0.0] {
                let x = [
                    center[0] + scale * radius * t.cos(),
                    center[1] + scale * radius * t.sin(),
                ];
                best = best.min((x[0] * q[0] + x[1] * q[1]).abs());
            }
        }
        best
    }

    #[test]
    fn p2h_distance_examples() {
        let q = normalize_query(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p2h_distance(&[0.0, 0.0, 1.0], &q).unwrap(), 0.0);

        let q = normalize_query(&[0.6, 0.8, -2.0]).unwrap();
        // p = (1, 2) against the raw hyperplane 0.6 p1 + 0.8 p2 - 2 = 0.
        let direct =
            (0.6 * 1.0 + 0.8 * 2.0 - 2.0f64).abs() / (0.6f64.powi(2) + 0.8f64.powi(2)).sqrt();
        let d = p2h_distance(&[1.0, 2.0, 1.0], &q).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        assert!((d - direct).abs() < 1e-12);

        let q = normalize_query(&[-0.6, -0.8, 2.0]).unwrap();
        assert!((p2h_distance(&[1.0, 2.0, 1.0], &q).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn p2h_distance_dimension_mismatch() {
        let q = normalize_query(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            p2h_distance(&[1.0, 1.0], &q),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn node_ball_bound_examples() {
        // c = (2, 0), r = 1, q = (1, 0).
        let sampled = sampled_min_2d([2.0, 0.0], 1.0, [1.0, 0.0]);
        let bound = node_ball_bound(2.0, 1.0, 1.0);
        assert_eq!(bound, 1.0);
        assert!(bound <= sampled + 1e-12);
        assert!((sampled - 1.0).abs() < 1e-6);

        assert_eq!(node_ball_bound(0.5, 1.0, 1.0), 0.0);

        // q = (2, 0) so ||q|| = 2, c = (-1.5, 0) so <q, c> = -3, r = 1.
        let sampled = sampled_min_2d([-1.5, 0.0], 1.0, [2.0, 0.0]);
        let bound = node_ball_bound(-3.0, 2.0, 1.0);
        assert_eq!(bound, 1.0);
        assert!(bound <= sampled + 1e-12);
        assert!((sampled - 1.0).abs() < 1e-6);
    }

    #[test]
    fn point_ball_bound_examples() {
        let sampled = sampled_min_2d([2.0, 0.0], 0.5, [1.0, 0.0]);
        assert_eq!(point_ball_bound(2.0, 1.0, 0.5), 1.5);
        assert!((sampled - 1.5).abs() < 1e-6);
        assert_eq!(point_ball_bound(2.0, 1.0, 0.0), 2.0);
        assert!(point_ball_bound(2.0, 1.0, 1.0) >= point_ball_bound(2.0, 1.0, 2.0));
        assert_eq!(point_ball_bound(2.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn point_cone_bound_examples() {
        let ctx = |q_cos: f64, q_sin: f64| QueryLeafContext {
            ip_node: 0.0,
            q_cos,
            q_sin,
            q_norm: (q_cos * q_cos + q_sin * q_sin).sqrt(),
        };
        let entry = |x_cos, x_sin| ConeEntry {
            x_cos,
            x_sin,
            r_x: 0.0,
        };
        assert_eq!(point_cone_bound(&ctx(1.0, 0.0), &entry(2.0, 0.0)), 2.0);
        assert_eq!(point_cone_bound(&ctx(-1.0, 0.0), &entry(2.0, 0.0)), 2.0);
        assert_eq!(point_cone_bound(&ctx(0.0, 1.0), &entry(0.0, 1.0)), 0.0);
    }

    #[test]
    fn child_ip_examples() {
        let ip = child_ip(1.0, 0.4, 10, 4, 6).unwrap();
        assert!((ip - 1.4).abs() < 1e-12);
        // 10 * 1.0 = 4 * 0.4 + 6 * 1.4
        assert!((10.0 * 1.0 - (4.0 * 0.4 + 6.0 * ip)).abs() < 1e-12);

        assert!((child_ip(0.75, 0.75, 9, 5, 4).unwrap() - 0.75).abs() < 1e-12);
        assert!((child_ip(-2.5, 123.0, 7, 0, 7).unwrap() + 2.5).abs() < 1e-12);
    }

    #[test]
    fn child_ip_rejects_bad_sizes() {
        assert!(matches!(
            child_ip(1.0, 1.0, 10, 4, 5),
            Err(Error::Invariant(_))
        ));
        assert!(matches!(
            child_ip(1.0, 1.0, 4, 4, 0),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn query_leaf_context_degenerate_center() {
        let ctx = QueryLeafContext::new(0.0, 0.0, 2.0);
        assert_eq!(ctx.q_cos, 0.0);
        assert_eq!(ctx.q_sin, 2.0);
        let e = ConeEntry::from_parts(4.0, 0.0, 0.0, 2.0);
        assert_eq!(point_cone_bound(&ctx, &e), 0.0);
    }

    #[test]
    fn cone_entry_at_center() {
        let c = [1.0, 2.0, 1.0];
        let e = ConeEntry::from_geometry(&c, &c);
        assert_eq!(e.r_x, 0.0);
        assert_eq!(e.x_sin, 0.0);
        assert!((e.x_cos - 6f64.sqrt()).abs() < 1e-12);
    }

    fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn node_bound_is_sound(seed in any::<u64>(), d in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = gaussian(&mut rng, d, 2.0);
            let r: f64 = rng.random_range(0.0..3.0);
            let q = gaussian(&mut rng, d, 1.0);
            let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = node_ball_bound(inner_product_f64(&c, &q), q_norm, r);
            for _ in 0..500 {
                let dir = gaussian(&mut rng, d, 1.0);
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let t: f64 = rng.random_range(0.0..=1.0f64).powf(1.0 / d as f64) * r;
                let x: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + b / len * t).collect();
                prop_assert!(bound <= inner_product_f64(&x, &q).abs() + 1e-6);
            }
        }

        #[test]
        fn cone_bound_is_sound_and_dominates_ball(seed in any::<u64>(), d in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = gaussian(&mut rng, d, 2.0);
            let x: Vec<f64> = c.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
            let q = gaussian(&mut rng, d, 1.0);
            let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let entry = ConeEntry::from_geometry(&x, &c);
            let ip_qc = inner_product_f64(&q, &c);
            let ctx = QueryLeafContext::new(ip_qc, c_norm, q_norm);
            let cone = point_cone_bound(&ctx, &entry);
            let ball = point_ball_bound(ip_qc, q_norm, entry.r_x);
            let truth = inner_product_f64(&x, &q).abs();
            prop_assert!(cone <= truth + 1e-6);
            prop_assert!(ball <= truth + 1e-6);
            prop_assert!(cone >= ball - 1e-6 * (1.0 + ball.abs()));
        }

        #[test]
        fn cone_entry_invariants(seed in any::<u64>(), d in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = gaussian(&mut rng, d, 1.5);
            let x = gaussian(&mut rng, d, 1.5);
            let e = ConeEntry::from_geometry(&x, &c);
            let x_norm_sq = x.iter().map(|v| v * v).sum::<f64>();
            let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(e.x_sin >= 0.0);
            prop_assert!((e.x_cos.powi(2) + e.x_sin.powi(2) - x_norm_sq).abs() <= 1e-5 * x_norm_sq.max(1e-12));
            let pyth = (c_norm - e.x_cos).powi(2) + e.x_sin.powi(2);
            prop_assert!((pyth - e.r_x.powi(2)).abs() <= 1e-4 * e.r_x.powi(2).max(1e-12));
        }

        #[test]
        fn ball_bound_monotone_in_radius(ip in -10.0f64..10.0, qn in 0.1f64..5.0, r1 in 0.0f64..5.0, dr in 0.0f64..5.0) {
            prop_assert!(point_ball_bound(ip, qn, r1) >= point_ball_bound(ip, qn, r1 + dr));
        }

        #[test]
        fn query_context_invariants(ip in -10.0f64..10.0, cn in 0.1f64..5.0, qn in 0.1f64..5.0) {
            let ctx = QueryLeafContext::new(ip, cn, qn);
            prop_assert!(ctx.q_sin >= 0.0);
            // Cauchy-Schwarz can be violated by arbitrary inputs, in which case
            // q_sin clamps to zero.
            if ctx.q_cos.abs() <= qn {
                prop_assert!((ctx.q_cos.powi(2) + ctx.q_sin.powi(2) - qn * qn).abs() <= 1e-6 * qn * qn);
            }
        }
    }
}
