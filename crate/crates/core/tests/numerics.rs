mod common;

use common::*;
use geotransolver::numerics::ops::{attention_weights, layer_norm, scaled_dot_attention};
use geotransolver::numerics::{gradcheck, Activation, Graph, Mlp, ParamStore, Tensor, Var};
use geotransolver::Result;
use proptest::prelude::*;

fn attention_value(q: &M, k: &M, v: &M) -> M {
    let mut g = Graph::<f64>::new();
    let (q, k, v) = (
        g.constant(to_t(q)),
        g.constant(to_t(k)),
        g.constant(to_t(v)),
    );
    let out = scaled_dot_attention(&mut g, q, k, v).unwrap();
    to_m(g.value(out))
}

#[test]
fn attention_matches_summation_oracle() {
    let (q, k, v) = (random(4, 8, 1), random(4, 8, 2), random(4, 8, 3));
    let got = attention_value(&q, &k, &v);
    assert!(max_abs_diff(&got, &attention(&q, &k, &v)) < 1e-12);
}

#[test]
fn attention_rectangular_matches_oracle() {
    let (q, k, v) = (random(3, 5, 4), random(7, 5, 5), random(7, 2, 6));
    let got = attention_value(&q, &k, &v);
    assert_eq!((got.len(), got[0].len()), (3, 2));
    assert!(max_abs_diff(&got, &attention(&q, &k, &v)) < 1e-12);
}

#[test]
fn f32_attention_tracks_f64() {
    let (q, k, v) = (random(4, 8, 11), random(6, 8, 12), random(6, 3, 13));
    let mut g = Graph::<f32>::new();
    let (qv, kv, vv) = (
        g.constant(to_t(&q).cast()),
        g.constant(to_t(&k).cast()),
        g.constant(to_t(&v).cast()),
    );
    let out = scaled_dot_attention(&mut g, qv, kv, vv).unwrap();
    let got = to_m(&g.value(out).cast());
    assert!(max_abs_diff(&got, &attention(&q, &k, &v)) < 1e-5);
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = M> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, cols), rows)
}

proptest! {
    #[test]
    fn attention_rows_are_stochastic(q in matrix(3, 4), k in matrix(5, 4)) {
        let mut g = Graph::<f64>::new();
        let (q, k) = (g.constant(to_t(&q)), g.constant(to_t(&k)));
        let w = attention_weights(&mut g, q, k).unwrap();
        for r in 0..3 {
            let row = g.value(w).row(r);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_output_is_convex_combination(q in matrix(2, 3), k in matrix(4, 3), v in matrix(4, 2)) {
        let out = attention_value(&q, &k, &v);
        for row in &out {
            for (j, x) in row.iter().enumerate() {
                let lo = v.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = v.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance(x in matrix(3, 5), c in prop::collection::vec(-50.0f64..50.0, 3)) {
        let shifted: M = x.iter().zip(&c).map(|(r, c)| r.iter().map(|v| v + c).collect()).collect();
        let mut g = Graph::<f64>::new();
        let a = g.constant(to_t(&x));
        let b = g.constant(to_t(&shifted));
        let sa = g.softmax_rows(a);
        let sb = g.softmax_rows(b);
        prop_assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-6);
    }

    #[test]
    fn layer_norm_shift_invariance(x in matrix(3, 4), c in prop::collection::vec(-20.0f64..20.0, 3)) {
        let shifted: M = x.iter().zip(&c).map(|(r, c)| r.iter().map(|v| v + c).collect()).collect();
        let mut g = Graph::<f64>::new();
        let gamma = g.constant(Tensor::filled(1, 4, 1.0));
        let beta = g.constant(Tensor::zeros(1, 4));
        let a = g.constant(to_t(&x));
        let b = g.constant(to_t(&shifted));
        let la = layer_norm(&mut g, a, gamma, beta, 1e-5).unwrap();
        let lb = layer_norm(&mut g, b, gamma, beta, 1e-5).unwrap();
        prop_assert!(g.value(la).max_abs_diff(g.value(lb)) < 1e-6);
    }
}

#[test]
fn layer_norm_two_element_row() {
    let mut g = Graph::<f64>::new();
    let gamma = g.constant(Tensor::filled(1, 2, 1.0));
    let beta = g.constant(Tensor::zeros(1, 2));
    let x = g.constant(Tensor::from_f64_rows(&[&[1.0, 3.0]]).unwrap());
    let y = layer_norm(&mut g, x, gamma, beta, 1e-12).unwrap();
    let y = g.value(y).data();
    assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_matches_oracle_with_affine() {
    let x = random(5, 6, 21);
    let gamma = random(1, 6, 22);
    let beta = random(1, 6, 23);
    let mut g = Graph::<f64>::new();
    let (xv, gv, bv) = (
        g.constant(to_t(&x)),
        g.constant(to_t(&gamma)),
        g.constant(to_t(&beta)),
    );
    let y = layer_norm(&mut g, xv, gv, bv, 1e-5).unwrap();
    let want = layer_norm_ref(&x, &gamma[0], &beta[0]);
    assert!(max_abs_diff(&to_m(g.value(y)), &want) < 1e-12);
}

fn layer_norm_ref(x: &M, gamma: &[f64], beta: &[f64]) -> M {
    common::layer_norm(x, gamma, beta, 1e-5)
}

#[test]
fn two_layer_gelu_mlp_matches_scalar_oracle() {
    let mut rng = rng(7);
    let mut store = ParamStore::<f64>::new();
    let net = Mlp::new("net", &[5, 9, 3], Activation::Gelu, Activation::Identity).unwrap();
    net.init_params(&mut store, &mut rng).unwrap();
    let x = random(6, 5, 7);
    let mut g = Graph::with_params(&store);
    let xv = g.constant(to_t(&x));
    let y = net.forward(&mut g, xv).unwrap();
    assert!(max_abs_diff(&to_m(g.value(y)), &mlp(&store, &net, &x)) < 1e-12);
}

#[test]
fn square_gradient_at_three() {
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::with_params(&store);
    let x = g.param("x").unwrap();
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().get(0, 0), 6.0);
    let report = gradcheck(
        |g| {
            let x = g.param("x")?;
            Ok(g.square(x))
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-8);
}

#[test]
fn layer_norm_sum_gradcheck() {
    let mut store = ParamStore::<f64>::new();
    store.insert("x", to_t(&random(3, 4, 31))).unwrap();
    store.insert("gamma", to_t(&random(1, 4, 32))).unwrap();
    store.insert("beta", to_t(&random(1, 4, 33))).unwrap();
    let weights = to_t(&random(3, 4, 34));
    let report = gradcheck(
        |g| {
            let (x, gm, b) = (g.param("x")?, g.param("gamma")?, g.param("beta")?);
            let y = g.layer_norm(x, gm, b, 1e-5)?;
            weighted_sum(g, y, &weights)
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

/// `Σ w ⊙ y` for a fixed `w`, so no gradient is uniform.
fn weighted_sum(g: &mut Graph<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let (r, c) = g.shape(y);
    let mut wt = Tensor::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            wt.set(i, j, w.get(i % w.rows(), j % w.cols()));
        }
    }
    let w = g.constant(wt);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

type OpFn = fn(&mut Graph<f64>, Var, Var, Var) -> Result<Var>;

/// Each entry takes `a (3×4)`, `b (3×4)` and `c (4×3)`.
fn ops() -> Vec<(&'static str, OpFn)> {
    vec![
        ("matmul", |g, a, _, c| g.matmul(a, c)),
        ("matmul_nt", |g, a, b, _| g.matmul_nt(a, b)),
        ("matmul_tn", |g, a, b, _| g.matmul_tn(a, b)),
        ("transpose", |g, a, _, _| Ok(g.transpose(a))),
        ("add", |g, a, b, _| g.add(a, b)),
        ("sub", |g, a, b, _| g.sub(a, b)),
        ("mul", |g, a, b, _| g.mul(a, b)),
        ("add_row", |g, a, b, _| {
            let r = g.slice_cols(b, 0, 4)?;
            let r = g.mean_rows(r)?;
            g.add_row(a, r)
        }),
        ("scale", |g, a, _, _| Ok(g.scale(a, -1.7))),
        ("add_const", |g, a, _, _| {
            let y = g.add_const(a, 0.3);
            Ok(g.square(y))
        }),
        ("scale_by", |g, a, b, _| {
            let s = g.sum_all(b);
            g.scale_by(s, a)
        }),
        ("gelu", |g, a, _, _| Ok(g.activation(a, Activation::Gelu))),
        ("relu", |g, a, _, _| Ok(g.activation(a, Activation::Relu))),
        ("sigmoid", |g, a, _, _| {
            Ok(g.activation(a, Activation::Sigmoid))
        }),
        ("abs", |g, a, _, _| Ok(g.abs(a))),
        ("square", |g, a, _, _| Ok(g.square(a))),
        ("softmax_rows", |g, a, _, _| Ok(g.softmax_rows(a))),
        ("layer_norm", |g, a, b, _| {
            let gamma = g.slice_cols(b, 0, 4)?;
            let gamma = g.mean_rows(gamma)?;
            let beta = g.sum_rows(b);
            g.layer_norm(a, gamma, beta, 1e-5)
        }),
        ("mean_rows", |g, a, _, _| g.mean_rows(a)),
        ("sum_rows", |g, a, _, _| Ok(g.sum_rows(a))),
        ("max_rows", |g, a, _, _| g.max_rows(a)),
        ("sum_cols", |g, a, _, _| Ok(g.sum_cols(a))),
        ("div_col", |g, a, b, _| {
            let sq = g.square(b);
            let s = g.sum_cols(sq);
            let s = g.add_const(s, 1.0);
            g.div_col(a, s)
        }),
        ("concat_cols", |g, a, b, _| g.concat_cols(&[a, b])),
        ("slice_cols", |g, a, _, _| g.slice_cols(a, 1, 3)),
        ("concat_rows", |g, a, _, c| {
            let ct = g.transpose(c);
            g.concat_rows(&[a, ct])
        }),
        ("segment_mean", |g, a, _, _| {
            g.segment_mean(a, &[0, 1, 1, 3])
        }),
        ("mean_all", |g, a, _, _| Ok(g.mean_all(a))),
        ("attention", |g, a, b, c| {
            let ct = g.transpose(c);
            scaled_dot_attention(g, a, b, ct)
        }),
        ("multi_head_attention", |g, a, b, c| {
            let ct = g.transpose(c);
            geotransolver::numerics::ops::multi_head_attention(g, a, b, ct, 2)
        }),
    ]
}

#[test]
fn every_op_passes_gradcheck() {
    let mut store = ParamStore::<f64>::new();
    store.insert("a", to_t(&random(3, 4, 41))).unwrap();
    store.insert("b", to_t(&random(3, 4, 42))).unwrap();
    store.insert("c", to_t(&random(4, 3, 43))).unwrap();
    let w = to_t(&random(7, 7, 44));
    for (name, op) in ops() {
        let report = gradcheck(
            |g| {
                let (a, b, c) = (g.param("a")?, g.param("b")?, g.param("c")?);
                let y = op(g, a, b, c)?;
                weighted_sum(g, y, &w)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{name}: {report:?}");
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = rng(5);
        let mut store = ParamStore::<f32>::new();
        let net = Mlp::new("n", &[4, 8, 2], Activation::Gelu, Activation::Identity).unwrap();
        net.init_params(&mut store, &mut rng).unwrap();
        let x: Tensor<f32> = to_t(&random(10, 4, 6)).cast();
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x);
        let h = net.forward(&mut g, xv).unwrap();
        let k = g.softmax_rows(h);
        let y = g.mean_all(k);
        let y2 = g.square(h);
        let y2 = g.mean_all(y2);
        let total = g.add(y, y2).unwrap();
        let grads = g.backward(total).unwrap().for_store(&store);
        let bits: Vec<u32> = grads
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        (g.value(h).clone(), bits)
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn non_finite_objective_is_rejected() {
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::scalar(f64::NAN)).unwrap();
    let r = gradcheck(
        |g| {
            let x = g.param("x")?;
            Ok(g.square(x))
        },
        &store,
        1e-5,
    );
    assert!(matches!(r, Err(geotransolver::Error::Numeric(_))));
}
