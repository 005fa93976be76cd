use std::f64::consts::PI;

use geotransolver::data::{generate_case, CaseSpec, ShapeKind, SURFACE};
use geotransolver::geometry::Point;
use geotransolver::metrics::{
    design_trend_table, kendall_tau, mae, r_squared, relative_l1, surface_force, ForceCoefficients,
    SurfaceQuadrature, TrendRow,
};
use geotransolver::numerics::Tensor;
use geotransolver::Error;
use proptest::prelude::*;

mod common;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_f64_rows(rows).unwrap()
}

/// Normals, areas, positions and Cp of a generated surface.
fn surface(spec: &CaseSpec) -> (Vec<Point>, Vec<f64>, Vec<Point>, Vec<f64>) {
    let case = generate_case(spec).unwrap();
    let s = case.stream(SURFACE).unwrap();
    let col = |n| s.column(n).unwrap();
    let (x, y, z) = (col("x"), col("y"), col("z"));
    let (nx, ny, nz) = (col("nx"), col("ny"), col("nz"));
    let normals = (0..s.len()).map(|i| [nx[i], ny[i], nz[i]]).collect();
    let pos = (0..s.len()).map(|i| [x[i], y[i], z[i]]).collect();
    (normals, col("area"), pos, col("cp"))
}

#[test]
fn mae_hand_examples() {
    let a = t(&[&[1.0, 2.0]]);
    assert_eq!(mae(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
    assert_eq!(mae(&[a.clone()], &[t(&[&[2.0, 2.0]])]).unwrap(), 1.0);
    let truth = [t(&[&[0.0], &[0.0]]), t(&[&[1.0, 1.0]])];
    let pred = [t(&[&[1.0], &[0.0]]), t(&[&[-1.0, 2.0]])];
    assert_eq!(mae(&truth, &pred).unwrap(), 2.0);
    assert!(matches!(
        mae(&[a.clone()], &[t(&[&[1.0]])]),
        Err(Error::Dimension { .. })
    ));
    assert!(mae(&[], &[]).is_err());
}

#[test]
fn relative_l1_hand_examples() {
    let u = t(&[&[2.0, 0.0]]);
    assert_eq!(relative_l1(&[u.clone()], &[u.clone()]).unwrap(), 0.0);
    assert_eq!(
        relative_l1(&[u.clone()], &[t(&[&[1.0, 0.0]])]).unwrap(),
        0.5
    );
    // A global ratio: the small case does not dominate.
    let truth = [t(&[&[1.0]]), t(&[&[100.0]])];
    let pred = [t(&[&[2.0]]), t(&[&[100.0]])];
    assert_eq!(relative_l1(&truth, &pred).unwrap(), 1.0 / 101.0);
    let zero = t(&[&[0.0, 0.0]]);
    assert!(matches!(
        relative_l1(&[zero.clone()], &[u]),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn r_squared_hand_examples() {
    let y = [1.0, 2.0, 3.0];
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert_eq!(r_squared(&y, &[2.0; 3]).unwrap(), 0.0);
    assert_eq!(r_squared(&y, &[1.0, 2.0, 2.0]).unwrap(), 0.5);
    assert!(matches!(
        r_squared(&[4.0; 3], &y),
        Err(Error::UndefinedMetric(_))
    ));
    assert!(matches!(
        r_squared(&[1.0], &[1.0]),
        Err(Error::UndefinedMetric(_))
    ));
}

/// Direct pair count with tie corrections.
fn tau_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut s, mut ta, mut tb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * if a[i] == a[j] { 0.0 } else { 1.0 };
            let y = (b[i] - b[j]).signum() * if b[i] == b[j] { 0.0 } else { 1.0 };
            s += x * y;
            ta += x * x;
            tb += y * y;
        }
    }
    s / (ta * tb).sqrt()
}

#[test]
fn kendall_tau_examples() {
    let y = [1.0, 2.0, 3.0];
    assert_eq!(kendall_tau(&y, &y), Some(1.0));
    assert_eq!(kendall_tau(&y, &[3.0, 2.0, 1.0]), Some(-1.0));
    assert!((kendall_tau(&y, &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let a = [1.0, 1.0, 2.0];
    assert!((kendall_tau(&a, &y).unwrap() - 2.0 / 6f64.sqrt()).abs() < 1e-15);
    assert_eq!(kendall_tau(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), None);
}

#[test]
fn trend_table_sorts_by_truth() {
    let rows = vec![
        TrendRow {
            id: "c".into(),
            truth: 3.0,
            pred: 2.0,
        },
        TrendRow {
            id: "a".into(),
            truth: 1.0,
            pred: 1.0,
        },
        TrendRow {
            id: "b".into(),
            truth: 2.0,
            pred: 3.0,
        },
    ];
    let table = design_trend_table(rows).unwrap();
    let ids: Vec<&str> = table.rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert!((table.tau.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(design_trend_table(vec![]).is_err());
    let one = design_trend_table(vec![TrendRow {
        id: "x".into(),
        truth: 1.0,
        pred: 0.0,
    }])
    .unwrap();
    assert_eq!(one.tau, None);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trend.csv");
    table.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().starts_with("0,a,1,1,"));
}

#[test]
fn linear_pressure_on_unit_sphere() {
    let spec = CaseSpec {
        surface_points: 20_000,
        volume_points: 4,
        ..CaseSpec::sphere("s", 1.0, 1.0, 0)
    };
    let (normals, area, pos, _) = surface(&spec);
    let pressure: Vec<f64> = pos.iter().map(|p| p[2]).collect();
    let shear = vec![[0.0; 3]; normals.len()];
    let q = SurfaceQuadrature::new(normals, area, pressure, 0.0, shear).unwrap();
    let f = surface_force(&q);
    let exact = -4.0 * PI / 3.0;
    assert!((f[2] / exact - 1.0).abs() < 1e-2, "F_z = {}", f[2]);
    assert!(f[0].abs() < 1e-2 && f[1].abs() < 1e-2);
}

#[test]
fn uniform_pressure_cancels_exactly() {
    for spec in [
        CaseSpec {
            surface_points: 800,
            ..CaseSpec::sphere("s", 1.3, 1.0, 0)
        },
        CaseSpec {
            kind: ShapeKind::Ellipsoid,
            axes: [1.4, 0.6, 0.9],
            surface_points: 802,
            r_outer: 4.0,
            ..CaseSpec::sphere("e", 1.0, 1.0, 0)
        },
    ] {
        let (normals, area, _, _) = surface(&spec);
        let n = normals.len();
        for (p, p_inf) in [(3.7, 1.2), (2.0, 2.0)] {
            let q = SurfaceQuadrature::new(
                normals.clone(),
                area.clone(),
                vec![p; n],
                p_inf,
                vec![[0.0; 3]; n],
            )
            .unwrap();
            assert_eq!(surface_force(&q), [0.0; 3]);
        }
    }
}

#[test]
fn shear_only_force_is_area_times_shear() {
    let spec = CaseSpec {
        surface_points: 500,
        ..CaseSpec::sphere("s", 0.7, 1.0, 0)
    };
    let (normals, area, _, _) = surface(&spec);
    let n = normals.len();
    let total: f64 = area.iter().sum();
    let q =
        SurfaceQuadrature::new(normals, area, vec![0.0; n], 0.0, vec![[1.0, 0.0, 0.0]; n]).unwrap();
    let f = surface_force(&q);
    assert!((f[0] - total).abs() < 1e-12 * total);
    assert_eq!((f[1], f[2]), (0.0, 0.0));
    assert!((q.total_area() - total).abs() < 1e-12);
}

#[test]
fn potential_flow_has_no_net_force() {
    for spec in [
        CaseSpec::sphere("s", 1.1, 1.3, 0),
        CaseSpec {
            kind: ShapeKind::Ellipsoid,
            axes: [1.3, 0.7, 0.9],
            r_outer: 3.5,
            onset: [0.6, 0.0, 0.8],
            ..CaseSpec::sphere("e", 1.0, 0.8, 0)
        },
    ] {
        let (normals, area, _, cp) = surface(&spec);
        let n = normals.len();
        let u2 = spec.speed * spec.speed;
        let dp: Vec<f64> = cp.iter().map(|c| 0.5 * u2 * c).collect();
        let q = SurfaceQuadrature::new(normals, area, dp, 0.0, vec![[0.0; 3]; n]).unwrap();
        let f = surface_force(&q);
        let a = spec.max_axis();
        let scale = u2 * a * a;
        for c in f {
            assert!(c.abs() < 0.02 * scale, "{:?} force {f:?}", spec.kind);
        }
    }
}

#[test]
fn quadrature_validation() {
    let ok = || (vec![[1.0, 0.0, 0.0]], vec![1.0], vec![0.0], vec![[0.0; 3]]);
    let (n, a, p, s) = ok();
    assert!(SurfaceQuadrature::new(n, a, p, 0.0, s).is_ok());
    let (_, a, p, s) = ok();
    assert!(matches!(
        SurfaceQuadrature::new(vec![[1.0, 1.0, 0.0]], a, p, 0.0, s),
        Err(Error::Quadrature(_))
    ));
    let (n, _, p, s) = ok();
    assert!(SurfaceQuadrature::new(n, vec![0.0], p, 0.0, s).is_err());
    let (n, a, _, s) = ok();
    assert!(SurfaceQuadrature::new(n, a, vec![], 0.0, s).is_err());
}

#[test]
fn coefficients_pick_drag_and_lift_axes() {
    let c = ForceCoefficients::from_force([2.0, 5.0, -4.0], None);
    assert_eq!((c.drag, c.lift), (2.0, -4.0));
    let c = ForceCoefficients::from_force([2.0, 5.0, -4.0], Some(2.0));
    assert_eq!((c.drag, c.lift), (1.0, -2.0));
}

fn fields() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relative_l1_is_scale_invariant((u, p) in fields(), s in 0.01f64..100.0) {
        prop_assume!(u.iter().any(|v| *v != 0.0));
        let n = u.len();
        let tu = Tensor::from_vec(n, 1, u.clone()).unwrap();
        let tp = Tensor::from_vec(n, 1, p.clone()).unwrap();
        let base = relative_l1(&[tu.clone()], &[tp.clone()]).unwrap();
        let scaled = relative_l1(&[tu.map(|v| v * s)], &[tp.map(|v| v * s)]).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        // One case: MAE is the relative error times the truth norm.
        let norm: f64 = u.iter().map(|v| v.abs()).sum();
        let m = mae(&[tu], &[tp]).unwrap();
        prop_assert!((m - base * norm).abs() <= 1e-9 * m.max(1.0));
    }

    #[test]
    fn r_squared_ignores_case_order((y, p) in fields(), seed in 0u64..1000) {
        prop_assume!(y.len() >= 2 && y.iter().any(|v| *v != y[0]));
        let perm = common::permutation(y.len(), seed);
        let ys: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let a = r_squared(&y, &p).unwrap();
        let b = r_squared(&ys, &ps).unwrap();
        prop_assert!(a <= 1.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn kendall_tau_matches_pair_count((a, b) in fields()) {
        let oracle = tau_oracle(&a, &b);
        match kendall_tau(&a, &b) {
            Some(t) => {
                prop_assert!((t - oracle).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&t));
            }
            None => prop_assert!(oracle.is_nan()),
        }
    }

    #[test]
    fn constant_pressure_cancels_on_any_closed_sample(n in 2usize..200, p in -5.0f64..5.0, a in 0.3f64..2.0) {
        let spec = CaseSpec { surface_points: 2 * n, volume_points: 4, ..CaseSpec::sphere("s", a, 1.0, 0) };
        let (normals, area, _, _) = surface(&spec);
        let m = normals.len();
        let q = SurfaceQuadrature::new(normals, area, vec![p; m], 0.0, vec![[0.0; 3]; m]).unwrap();
        prop_assert_eq!(surface_force(&q), [0.0; 3]);
    }
}
