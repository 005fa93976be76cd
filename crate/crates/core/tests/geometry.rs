mod common;

use geotransolver::geometry::{
    ball_query, query_all_scales, MultiScaleSchedule, NeighborList, Point, PointSet, QueryMode,
    SpatialIndex,
};
use proptest::prelude::*;
use rand::Rng;

/// Sorted `(distance, index)` pairs within `r`, truncated to `cap`.
fn oracle(targets: &[Point], q: Point, r: f64, cap: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let d = ((t[0] - q[0]).powi(2) + (t[1] - q[1]).powi(2) + (t[2] - q[2]).powi(2)).sqrt();
            (d, i)
        })
        .filter(|(d, _)| *d <= r)
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(cap).map(|(_, i)| i).collect()
}

fn indices(list: &NeighborList, q: usize) -> Vec<usize> {
    list.neighbors(q).iter().map(|n| n.index).collect()
}

fn uniform(n: usize, seed: u64) -> Vec<Point> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|_| {
            [
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

fn query(
    targets: &PointSet,
    queries: &PointSet,
    r: f64,
    cap: usize,
    mode: QueryMode,
) -> NeighborList {
    let idx = SpatialIndex::build(targets, r).unwrap();
    ball_query(&idx, queries, r, cap, mode).unwrap()
}

#[test]
fn thousand_points_match_both_oracles() {
    let targets = PointSet::new(uniform(1000, 1)).unwrap();
    let queries = PointSet::new(uniform(100, 2)).unwrap();
    for (r, cap) in [(0.1, 4), (0.3, 16), (0.7, 64), (2.0, 2000)] {
        let a = query(&targets, &queries, r, cap, QueryMode::Indexed);
        let b = query(&targets, &queries, r, cap, QueryMode::Brute);
        assert_eq!(a, b);
        for q in 0..queries.len() {
            assert_eq!(
                indices(&a, q),
                oracle(targets.positions(), queries.get(q), r, cap)
            );
        }
    }
}

#[test]
fn small_cells_still_match() {
    let targets = PointSet::new(uniform(300, 3)).unwrap();
    let queries = PointSet::new(uniform(40, 4)).unwrap();
    let idx = SpatialIndex::build(&targets, 0.05).unwrap();
    let a = ball_query(&idx, &queries, 0.5, 10, QueryMode::Indexed).unwrap();
    let b = ball_query(&idx, &queries, 0.5, 10, QueryMode::Brute).unwrap();
    assert_eq!(a, b);
}

#[test]
fn line_targets_keep_two_nearest() {
    let targets = PointSet::new(vec![[3.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
    let q = PointSet::new(vec![[0.0; 3]]).unwrap();
    let l = query(&targets, &q, 2.5, 2, QueryMode::Indexed);
    assert_eq!(indices(&l, 0), vec![1, 2]);
    assert_eq!(l.neighbors(0)[0].distance, 1.0);
    assert_eq!(l.neighbors(0)[1].offset, [2.0, 0.0, 0.0]);
}

#[test]
fn boundary_is_inclusive_and_coincident_target_found() {
    let targets = PointSet::new(vec![[0.5, 0.0, 0.0], [0.0; 3]]).unwrap();
    let q = PointSet::new(vec![[0.0; 3]]).unwrap();
    let l = query(&targets, &q, 0.5, 8, QueryMode::Indexed);
    assert_eq!(indices(&l, 0), vec![1, 0]);
    let l = query(&targets, &q, 0.1, 8, QueryMode::Indexed);
    assert_eq!(indices(&l, 0), vec![1]);
    assert_eq!(l.neighbors(0)[0].distance, 0.0);
}

#[test]
fn ties_break_by_index() {
    let targets = PointSet::new(vec![
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [-1.0, 0.0, 0.0],
    ])
    .unwrap();
    let q = PointSet::new(vec![[0.0; 3]]).unwrap();
    let l = query(&targets, &q, 1.0, 3, QueryMode::Indexed);
    assert_eq!(indices(&l, 0), vec![0, 1, 2]);
}

#[test]
fn multi_scale_lists_follow_schedule() {
    // Two tight clusters one unit apart.
    let mut r = common::rng(9);
    let pts: Vec<Point> = (0..200)
        .map(|i| {
            let c = if i % 2 == 0 { 0.0 } else { 1.0 };
            [
                c + r.gen_range(-0.03..0.03),
                r.gen_range(-0.03..0.03),
                r.gen_range(-0.03..0.03),
            ]
        })
        .collect();
    let targets = PointSet::new(pts.clone()).unwrap();
    let queries = PointSet::new(pts[..20].to_vec()).unwrap();
    let schedule = MultiScaleSchedule::from_pairs(&[(0.05, 8), (2.5, 8)]).unwrap();
    let idx = SpatialIndex::build(&targets, 0.05).unwrap();
    let lists = query_all_scales(&idx, &queries, &schedule).unwrap();
    assert_eq!(lists.len(), 2);
    for q in 0..queries.len() {
        let small = indices(&lists[0], q);
        let big_candidates = oracle(&pts, queries.get(q), 2.5, usize::MAX);
        assert!(small.iter().all(|i| big_candidates.contains(i)));
        assert_eq!(small, oracle(&pts, queries.get(q), 0.05, 8));
        assert_eq!(indices(&lists[1], q), oracle(&pts, queries.get(q), 2.5, 8));
    }
    let twice = MultiScaleSchedule::from_pairs(&[(0.3, 5), (0.3, 5)]).unwrap();
    let lists = query_all_scales(&idx, &queries, &twice).unwrap();
    assert_eq!(lists[0], lists[1]);
}

fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 0..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indexed_equals_brute(t in points(120), q in points(20), r in 0.05f64..3.0, cap in 1usize..40) {
        let targets = PointSet::new(t).unwrap();
        let queries = PointSet::new(q).unwrap();
        prop_assert_eq!(
            query(&targets, &queries, r, cap, QueryMode::Indexed),
            query(&targets, &queries, r, cap, QueryMode::Brute)
        );
    }

    #[test]
    fn lists_are_sorted_unique_and_within_radius(t in points(120), q in points(10), r in 0.05f64..3.0, cap in 1usize..40) {
        let targets = PointSet::new(t).unwrap();
        let queries = PointSet::new(q).unwrap();
        let l = query(&targets, &queries, r, cap, QueryMode::Indexed);
        prop_assert_eq!(l.num_queries(), queries.len());
        for (qi, ns) in l.iter().enumerate() {
            prop_assert!(ns.len() <= cap);
            let mut seen: Vec<usize> = ns.iter().map(|n| n.index).collect();
            for w in ns.windows(2) {
                prop_assert!((w[0].distance, w[0].index) < (w[1].distance, w[1].index));
            }
            for n in ns {
                prop_assert!(n.distance <= r);
                let t = targets.get(n.index);
                let qp = queries.get(qi);
                for d in 0..3 {
                    prop_assert_eq!(n.offset[d], t[d] - qp[d]);
                }
            }
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), ns.len());
        }
    }

    #[test]
    fn smaller_radius_is_contained(t in points(100), q in points(10), a in 0.05f64..1.5, extra in 0.0f64..1.5) {
        let b = a + extra + 1e-9;
        let targets = PointSet::new(t).unwrap();
        let queries = PointSet::new(q).unwrap();
        let cap = targets.len().max(1);
        let la = query(&targets, &queries, a, cap, QueryMode::Indexed);
        let lb = query(&targets, &queries, b, cap, QueryMode::Indexed);
        for i in 0..queries.len() {
            let big = indices(&lb, i);
            prop_assert!(indices(&la, i).iter().all(|x| big.contains(x)));
        }
    }

    #[test]
    fn target_order_does_not_matter(t in points(80), q in points(10), r in 0.1f64..2.0, cap in 1usize..20, seed in 0u64..1000) {
        let perm = common::permutation(t.len(), seed);
        let shuffled: Vec<Point> = perm.iter().map(|&i| t[i]).collect();
        let queries = PointSet::new(q).unwrap();
        let a = query(&PointSet::new(t).unwrap(), &queries, r, cap, QueryMode::Indexed);
        let b = query(&PointSet::new(shuffled).unwrap(), &queries, r, cap, QueryMode::Indexed);
        for i in 0..queries.len() {
            let mapped: Vec<usize> = indices(&b, i).iter().map(|&j| perm[j]).collect();
            // Mapped back to original indices, only genuine distance ties may reorder.
            let mut x = indices(&a, i);
            let mut y = mapped;
            let da: Vec<f64> = a.neighbors(i).iter().map(|n| n.distance).collect();
            let db: Vec<f64> = b.neighbors(i).iter().map(|n| n.distance).collect();
            prop_assert_eq!(da, db);
            x.sort_unstable();
            y.sort_unstable();
            if a.neighbors(i).len() < cap {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn cap_results_are_prefixes(t in points(100), q in points(10), r in 0.1f64..3.0, k in 1usize..20, more in 1usize..20) {
        let targets = PointSet::new(t).unwrap();
        let queries = PointSet::new(q).unwrap();
        let small = query(&targets, &queries, r, k, QueryMode::Indexed);
        let large = query(&targets, &queries, r, k + more, QueryMode::Indexed);
        for i in 0..queries.len() {
            let s = small.neighbors(i);
            prop_assert_eq!(s, &large.neighbors(i)[..s.len()]);
        }
    }
}

#[test]
fn invalid_arguments_are_rejected() {
    let targets = PointSet::new(vec![[0.0; 3]]).unwrap();
    assert!(SpatialIndex::build(&targets, 0.0).is_err());
    let idx = SpatialIndex::build(&targets, 1.0).unwrap();
    assert_eq!(idx.occupied_cells(), 1);
    assert!(ball_query(&idx, &targets, 0.0, 1, QueryMode::Indexed).is_err());
    assert!(ball_query(&idx, &targets, 1.0, 0, QueryMode::Indexed).is_err());
    assert!(PointSet::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
}
