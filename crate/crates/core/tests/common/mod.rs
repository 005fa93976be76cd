//! Plain-loop reference implementations used as test oracles.
#![allow(dead_code)]

use geotransolver::geometry::Point;
use geotransolver::numerics::{Mlp, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rows: usize, cols: usize, seed: u64) -> M {
    let mut r = rng(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_m(t: &Tensor<f64>) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn to_t(m: &M) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

pub fn matmul(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &M) -> M {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Row by row: logits, softmax, weighted sum of value rows.
pub fn attention(q: &M, k: &M, v: &M) -> M {
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let w = softmax(&logits);
            let mut out = vec![0.0; v[0].len()];
            for (wj, vj) in w.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += wj * x;
                }
            }
            out
        })
        .collect()
}

pub fn layer_norm(x: &M, gamma: &[f64], beta: &[f64], eps: f64) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| gamma[j] * (v - mean) / (var + eps).sqrt() + beta[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn param(store: &ParamStore<f64>, name: &str) -> M {
    to_m(store.get(name).unwrap_or_else(|| panic!("missing {name}")))
}

/// Gelu hidden layers, identity output, evaluated element by element.
pub fn mlp(store: &ParamStore<f64>, net: &Mlp, x: &M) -> M {
    let mut h = x.clone();
    let depth = net.layers.len();
    for (i, l) in net.layers.iter().enumerate() {
        let w = param(store, &l.weight);
        let b = &param(store, &l.bias)[0];
        h = matmul(&h, &w)
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(b)
                    .map(|(v, bb)| if i + 1 == depth { v + bb } else { gelu(v + bb) })
                    .collect()
            })
            .collect();
    }
    h
}

pub fn mean_rows(x: &M) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len())
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Adds uniform noise in `±amp` to every parameter.
pub fn perturb(store: &mut ParamStore<f64>, amp: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in store.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += r.gen_range(-amp..amp));
    }
}

/// A random permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng(seed));
    p
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Brute-force nearest-`cap` within `r`, ties by index.
pub fn ball(targets: &[Point], q: Point, r: f64, cap: usize) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| (dist(t, q), i))
        .filter(|(d, _)| *d <= r)
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().take(cap).map(|(_, i)| i).collect()
}

/// Mean over neighbours of `net([feature_j, target_j − q])`, zero when empty.
#[allow(clippy::too_many_arguments)]
pub fn neighbor_mean(
    store: &ParamStore<f64>,
    net: &Mlp,
    targets: &[Point],
    features: &M,
    q: Point,
    r: f64,
    cap: usize,
    width: usize,
) -> Vec<f64> {
    let nb = ball(targets, q, r, cap);
    if nb.is_empty() {
        return vec![0.0; width];
    }
    let rows: M = nb
        .iter()
        .map(|&j| {
            let mut row = features[j].clone();
            row.extend((0..3).map(|d| targets[j][d] - q[d]));
            row
        })
        .collect();
    mean_rows(&mlp(store, net, &rows))
}
