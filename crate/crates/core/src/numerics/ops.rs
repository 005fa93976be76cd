//! Composite differentiable operations built from [`Graph`] primitives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let w = attention_weights(g, q, k)?;
    let (m, _) = g.shape(k);
    if g.shape(v).0 != m {
        return Err(Error::dim(
            "scaled_dot_attention",
            format!("{m} keys but {} values", g.shape(v).0),
        ));
    }
    g.matmul(w, v)
}

/// Row-stochastic attention weights `softmax(Q Kᵀ / √d_k)`.
pub fn attention_weights<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Var> {
    let (_, dq) = g.shape(q);
    let (_, dk) = g.shape(k);
    if dk == 0 {
        return Err(Error::InvalidArgument("attention with d_k = 0".into()));
    }
    if dq != dk {
        return Err(Error::dim(
            "scaled_dot_attention",
            format!("query width {dq} vs key width {dk}"),
        ));
    }
    let logits = g.matmul_nt(q, k)?;
    let scaled = g.scale(logits, T::one() / T::from_usize_lossy(dk).sqrt());
    Ok(g.softmax_rows(scaled))
}

/// Attention with the projected width split evenly across `heads`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<Var> {
    if heads <= 1 {
        return scaled_dot_attention(g, q, k, v);
    }
    let dk = g.shape(q).1;
    let dv = g.shape(v).1;
    if dk % heads != 0 || dv % heads != 0 {
        return Err(Error::dim(
            "multi_head_attention",
            format!("widths {dk}/{dv} not divisible by {heads} heads"),
        ));
    }
    let (hk, hv) = (dk / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * hk, (h + 1) * hk)?;
        let kh = g.slice_cols(k, h * hk, (h + 1) * hk)?;
        let vh = g.slice_cols(v, h * hv, (h + 1) * hv)?;
        outs.push(scaled_dot_attention(g, qh, kh, vh)?);
    }
    g.concat_cols(&outs)
}

/// Layer normalisation with affine parameters.
pub fn layer_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: T,
) -> Result<Var> {
    g.layer_norm(x, gamma, beta, eps)
}

/// Names of the parameters backing one affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: String,
    pub bias: String,
    pub activation: Activation,
}

/// Applies `act(X W + b)` layer by layer.
pub fn mlp_forward<T: Scalar>(g: &mut Graph<T>, x: Var, layers: &[Dense]) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let w = g.param(&layer.weight)?;
        let b = g.param(&layer.bias)?;
        let (rows, cols) = g.shape(w);
        if g.shape(h).1 != rows {
            return Err(Error::dim(
                "mlp_forward",
                format!(
                    "layer {i} (`{}`) expects width {rows}, input has {}",
                    layer.weight,
                    g.shape(h).1
                ),
            ));
        }
        if g.shape(b) != (1, cols) {
            return Err(Error::dim(
                "mlp_forward",
                format!("bias `{}` has shape {:?}", layer.bias, g.shape(b)),
            ));
        }
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        h = g.activation(z, layer.activation);
    }
    Ok(h)
}

/// A stack of [`Dense`] layers registered in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    widths: Vec<usize>,
}

impl Mlp {
    /// Wiring for `widths.len() - 1` layers under `prefix`. Hidden layers use
    /// `hidden`; the last layer uses `last`.
    pub fn new(
        prefix: &str,
        widths: &[usize],
        hidden: Activation,
        last: Activation,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "mlp `{prefix}` needs at least two non-zero widths, got {widths:?}"
            )));
        }
        let depth = widths.len() - 1;
        let layers = (0..depth)
            .map(|i| Dense {
                weight: format!("{prefix}.{i}.weight"),
                bias: format!("{prefix}.{i}.bias"),
                activation: if i + 1 == depth { last } else { hidden },
            })
            .collect();
        Ok(Self {
            layers,
            widths: widths.to_vec(),
        })
    }

    /// Registers weights and biases uniform in `±1/√fan_in`.
    pub fn init_params<T: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        for (layer, pair) in self.layers.iter().zip(self.widths.windows(2)) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            store.insert(&layer.weight, Tensor::uniform(fan_in, fan_out, bound, rng))?;
            store.insert(&layer.bias, Tensor::uniform(1, fan_out, bound, rng))?;
        }
        Ok(())
    }

    /// Scalar count of this MLP's parameters.
    pub fn num_scalars(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        mlp_forward(g, x, &self.layers)
    }

    pub fn last_layer(&self) -> &Dense {
        self.layers.last().expect("non-empty mlp")
    }
}
