//! Wall-clock build comparison. Kept in its own binary so no other test
//! competes for the CPU while it runs.

use std::time::Instant;

use p2hnns::{gaussian_points, BallTree, BcTree};

#[test]
fn bc_build_is_not_slower_than_ball_build() {
    let data = gaussian_points(100_000, 32, 1).unwrap();
    // Back-to-back pairs; the median pair ratio ignores load bursts.
    let mut ratios = Vec::new();
    let (mut ball, mut bc) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..11 {
        let t = Instant::now();
        std::hint::black_box(BallTree::build(&data, 100, 3).unwrap());
        let tb = t.elapsed().as_secs_f64();
        let t = Instant::now();
        std::hint::black_box(BcTree::build(&data, 100, 3).unwrap());
        let tc = t.elapsed().as_secs_f64();
        ratios.push(tc / tb);
        (ball, bc) = (ball.min(tb), bc.min(tc));
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    eprintln!(
        "best ball {:.1} ms, best bc {:.1} ms, median ratio {median:.3}",
        ball * 1e3,
        bc * 1e3
    );
    assert!(median <= 1.05, "median bc/ball build ratio {median:.3}");
}
