mod common;

use common::*;
use geotransolver::context::{
    build_context, geom_to_input_features, input_to_geom_features, multi_scale_neighbors,
    ContextModules, GeometrySample, LocalStream, PoolMode,
};
use geotransolver::geometry::{MultiScaleSchedule, Point, PointSet};
use geotransolver::numerics::{Activation, Graph, Mlp, ParamStore, Tensor};
use geotransolver::Error;
use proptest::prelude::*;
use rand::Rng;

struct Setup {
    store: ParamStore<f64>,
    schedule: MultiScaleSchedule,
    psi: Vec<Mlp>,
    modules: ContextModules,
}

const D_X: usize = 2;
const D_G: usize = 3;
const D_P: usize = 2;
const D_BQ: usize = 5;
const D_C: usize = 6;

fn net(store: &mut ParamStore<f64>, name: &str, widths: &[usize], r: &mut impl Rng) -> Mlp {
    let m = Mlp::new(name, widths, Activation::Gelu, Activation::Identity).unwrap();
    m.init_params(store, r).unwrap();
    m
}

fn setup(pairs: &[(f64, usize)], seed: u64) -> Setup {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let schedule = MultiScaleSchedule::from_pairs(pairs).unwrap();
    let psi = (0..pairs.len())
        .map(|s| net(&mut store, &format!("psi{s}"), &[D_G + 3, 7, D_BQ], &mut r))
        .collect();
    let phi = (0..pairs.len())
        .map(|s| net(&mut store, &format!("phi{s}"), &[D_X + 3, 7, D_C], &mut r))
        .collect();
    let modules = ContextModules {
        embed_p: net(&mut store, "embed", &[D_P, 4, D_C], &mut r),
        rho: net(&mut store, "rho", &[D_G, 4, D_C], &mut r),
        phi,
        pool: PoolMode::Mean,
    };
    Setup {
        store,
        schedule,
        psi,
        modules,
    }
}

fn cloud(n: usize, r: &mut impl Rng) -> Vec<Point> {
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

fn stream(name: &str, n: usize, seed: u64) -> LocalStream {
    let mut r = rng(seed);
    let pos = cloud(n, &mut r);
    LocalStream::new(
        name,
        PointSet::new(pos).unwrap(),
        Tensor::uniform(n, D_X, 1.0, &mut r),
    )
    .unwrap()
}

fn geometry(n: usize, seed: u64) -> GeometrySample {
    let mut r = rng(seed);
    let pos = cloud(n, &mut r);
    let feats = Tensor::uniform(n, D_G, 1.0, &mut r);
    let global = (0..D_P).map(|_| r.gen_range(-1.0..1.0)).collect();
    GeometrySample::new(PointSet::new(pos).unwrap(), feats, global).unwrap()
}

fn u_ref(s: &Setup, stream: &LocalStream, geom: &GeometrySample) -> M {
    let feats = to_m(&geom.features);
    stream
        .positions
        .positions()
        .iter()
        .map(|&x| {
            s.schedule
                .scales()
                .iter()
                .zip(&s.psi)
                .flat_map(|(sc, psi)| {
                    neighbor_mean(
                        &s.store,
                        psi,
                        geom.points.positions(),
                        &feats,
                        x,
                        sc.radius,
                        sc.cap,
                        D_BQ,
                    )
                })
                .collect()
        })
        .collect()
}

fn context_ref(s: &Setup, streams: &[&LocalStream], geom: &GeometrySample) -> M {
    let mut pos = Vec::new();
    let mut feats = Vec::new();
    for st in streams {
        pos.extend_from_slice(st.positions.positions());
        feats.extend(to_m(&st.features));
    }
    let mut rows = vec![mlp(&s.store, &s.modules.embed_p, &vec![geom.global.clone()]).remove(0)];
    rows.push(mean_rows(&mlp(
        &s.store,
        &s.modules.rho,
        &to_m(&geom.features),
    )));
    for (sc, phi) in s.schedule.scales().iter().zip(&s.modules.phi) {
        let h: M = geom
            .points
            .positions()
            .iter()
            .map(|&gj| neighbor_mean(&s.store, phi, &pos, &feats, gj, sc.radius, sc.cap, D_C))
            .collect();
        rows.push(mean_rows(&h));
    }
    rows
}

fn context_value(s: &Setup, streams: &[&LocalStream], geom: &GeometrySample) -> Tensor<f64> {
    let mut g = Graph::with_params(&s.store);
    let c = build_context(&mut g, streams, geom, &s.schedule, &s.modules).unwrap();
    g.value(c.tokens).clone()
}

#[test]
fn augmentation_matches_loop_oracle() {
    let s = setup(&[(0.3, 4), (0.8, 16), (1.5, 64)], 1);
    let st = stream("surface", 25, 2);
    let geom = geometry(60, 3);
    let mut g = Graph::with_params(&s.store);
    let u = geom_to_input_features(&mut g, &st, &geom, &s.schedule, &s.psi).unwrap();
    assert_eq!(g.shape(u), (25, 3 * D_BQ));
    assert!(max_abs_diff(&to_m(g.value(u)), &u_ref(&s, &st, &geom)) < 1e-12);
}

#[test]
fn single_coincident_neighbour_is_plain_mlp() {
    let s = setup(&[(0.5, 4)], 4);
    let geom = GeometrySample::new(
        PointSet::new(vec![[0.2, 0.1, -0.3]]).unwrap(),
        Tensor::from_f64_rows(&[&[0.4, -0.7, 1.1]]).unwrap(),
        vec![0.0; D_P],
    )
    .unwrap();
    let st = LocalStream::new(
        "s",
        PointSet::new(vec![[0.2, 0.1, -0.3]]).unwrap(),
        Tensor::zeros(1, D_X),
    )
    .unwrap();
    let mut g = Graph::with_params(&s.store);
    let u = geom_to_input_features(&mut g, &st, &geom, &s.schedule, &s.psi).unwrap();
    let want = mlp(
        &s.store,
        &s.psi[0],
        &vec![vec![0.4, -0.7, 1.1, 0.0, 0.0, 0.0]],
    );
    assert!(max_abs_diff(&to_m(g.value(u)), &want) < 1e-12);
}

#[test]
fn input_to_geometry_matches_oracle_and_union() {
    let s = setup(&[(0.4, 6), (1.0, 32)], 5);
    let a = stream("surface", 30, 6);
    let b = stream("volume", 20, 7);
    let geom = geometry(15, 8);
    let mut g = Graph::with_params(&s.store);
    let split =
        input_to_geom_features(&mut g, &[&a, &b], &geom, &s.schedule, &s.modules.phi).unwrap();

    let joined = LocalStream::new(
        "all",
        PointSet::concat([&a.positions, &b.positions]),
        Tensor::from_rows(&[to_m(&a.features), to_m(&b.features)].concat()).unwrap(),
    )
    .unwrap();
    let together =
        input_to_geom_features(&mut g, &[&joined], &geom, &s.schedule, &s.modules.phi).unwrap();
    let mut pos = a.positions.positions().to_vec();
    pos.extend_from_slice(b.positions.positions());
    let feats = to_m(&joined.features);
    for (k, sc) in s.schedule.scales().iter().enumerate() {
        assert_eq!(g.value(split[k]), g.value(together[k]));
        let want: M = geom
            .points
            .positions()
            .iter()
            .map(|&gj| {
                neighbor_mean(
                    &s.store,
                    &s.modules.phi[k],
                    &pos,
                    &feats,
                    gj,
                    sc.radius,
                    sc.cap,
                    D_C,
                )
            })
            .collect();
        assert!(max_abs_diff(&to_m(g.value(split[k])), &want) < 1e-12);
    }
}

#[test]
fn far_geometry_point_gets_zero_rows() {
    let s = setup(&[(0.2, 4), (0.4, 4)], 9);
    let st = stream("s", 10, 10);
    let geom = GeometrySample::new(
        PointSet::new(vec![[40.0, 0.0, 0.0]]).unwrap(),
        Tensor::zeros(1, D_G),
        vec![0.0; D_P],
    )
    .unwrap();
    let mut g = Graph::with_params(&s.store);
    for h in input_to_geom_features(&mut g, &[&st], &geom, &s.schedule, &s.modules.phi).unwrap() {
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn context_matches_oracle() {
    let s = setup(&[(0.3, 4), (0.6, 8), (1.2, 16), (2.5, 32)], 11);
    let a = stream("surface", 40, 12);
    let b = stream("volume", 25, 13);
    let geom = geometry(50, 14);
    let c = context_value(&s, &[&a, &b], &geom);
    assert_eq!(c.shape(), (6, D_C));
    assert!(max_abs_diff(&to_m(&c), &context_ref(&s, &[&a, &b], &geom)) < 1e-12);
}

#[test]
fn zero_inputs_with_zero_biases_give_zero_rows() {
    let mut s = setup(&[(0.5, 8)], 15);
    for (name, t) in s.store.iter_mut() {
        if (name.starts_with("rho") || name.starts_with("embed")) && name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let st = stream("s", 10, 16);
    let mut geom = geometry(20, 17);
    geom.features = Tensor::zeros(20, D_G);
    geom.global = vec![0.0; D_P];
    let c = context_value(&s, &[&st], &geom);
    assert!(c.row(0).iter().all(|&v| v == 0.0));
    assert!(c.row(1).iter().all(|&v| v == 0.0));
}

#[test]
fn empty_geometry_is_an_invalid_sample() {
    let s = setup(&[(0.5, 8)], 18);
    let st = stream("s", 4, 19);
    let geom =
        GeometrySample::new(PointSet::empty(), Tensor::zeros(0, D_G), vec![0.0; D_P]).unwrap();
    let mut g = Graph::with_params(&s.store);
    assert!(matches!(
        build_context(&mut g, &[&st], &geom, &s.schedule, &s.modules),
        Err(Error::Sample(_))
    ));
}

#[test]
fn widths_are_functions_of_the_schedule() {
    for name in ["1scale", "2scale", "3scale", "4scale"] {
        let schedule = MultiScaleSchedule::preset(name).unwrap();
        let pairs: Vec<(f64, usize)> = schedule
            .scales()
            .iter()
            .map(|x| (x.radius, x.cap))
            .collect();
        let s = setup(&pairs, 20);
        let st = stream("s", 12, 21);
        let geom = geometry(30, 22);
        let mut g = Graph::with_params(&s.store);
        let u = geom_to_input_features(&mut g, &st, &geom, &s.schedule, &s.psi).unwrap();
        assert_eq!(g.shape(u), (12, pairs.len() * D_BQ));
        let c = build_context(&mut g, &[&st], &geom, &s.schedule, &s.modules).unwrap();
        assert_eq!(c.rows(), pairs.len() + 2);
        assert_eq!(g.shape(c.tokens), (pairs.len() + 2, D_C));
    }
}

#[test]
fn doubling_coordinates_doubles_offsets() {
    let mut r = rng(23);
    let targets = cloud(80, &mut r);
    let queries = cloud(10, &mut r);
    let twice = |p: &[Point]| {
        PointSet::new(
            p.iter()
                .map(|x| [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]])
                .collect(),
        )
        .unwrap()
    };
    let sched = MultiScaleSchedule::from_pairs(&[(0.3, 5), (0.9, 12)]).unwrap();
    let sched2 = MultiScaleSchedule::from_pairs(&[(0.6, 5), (1.8, 12)]).unwrap();
    let a = multi_scale_neighbors(
        &PointSet::new(targets.clone()).unwrap(),
        &PointSet::new(queries.clone()).unwrap(),
        &sched,
    )
    .unwrap();
    let b = multi_scale_neighbors(&twice(&targets), &twice(&queries), &sched2).unwrap();
    for (la, lb) in a.iter().zip(&b) {
        assert_eq!(la.offsets(), lb.offsets());
        for (x, y) in la.entries().iter().zip(lb.entries()) {
            assert_eq!(x.index, y.index);
            for d in 0..3 {
                assert!((2.0 * x.offset[d] - y.offset[d]).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn context_is_permutation_invariant(seed in 0u64..10_000) {
        let s = setup(&[(0.4, 6), (1.0, 24)], 30);
        let a = stream("surface", 30, seed);
        let b = stream("volume", 20, seed + 1);
        let geom = geometry(40, seed + 2);
        let base = context_value(&s, &[&a, &b], &geom);

        let gp = geom.select(&permutation(geom.len(), seed + 3));
        prop_assert_eq!(&context_value(&s, &[&a, &b], &gp), &base);

        let ap = a.select(&permutation(a.len(), seed + 4));
        let bp = b.select(&permutation(b.len(), seed + 5));
        prop_assert_eq!(&context_value(&s, &[&ap, &bp], &geom), &base);
    }

    #[test]
    fn augmentation_is_row_equivariant(seed in 0u64..10_000) {
        let s = setup(&[(0.5, 8), (1.2, 16)], 31);
        let st = stream("s", 20, seed);
        let geom = geometry(40, seed + 1);
        let perm = permutation(st.len(), seed + 2);
        let mut g = Graph::with_params(&s.store);
        let u = geom_to_input_features(&mut g, &st, &geom, &s.schedule, &s.psi).unwrap();
        let up = geom_to_input_features(&mut g, &st.select(&perm), &geom.select(&permutation(40, seed + 3)), &s.schedule, &s.psi).unwrap();
        prop_assert_eq!(g.value(up), &g.value(u).select_rows(&perm));
    }
}
