//! The GALE block: physics-state self-attention, cross-attention to the
//! shared context, a scalar sigmoid gate blending the two, and an FFN
//! residual. Both the attention mix and the FFN use pre-norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::multi_head_attention;
use crate::numerics::{Activation, Graph, Mlp, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Guard added to the slice-weight column sums.
pub const SLICE_EPS: f64 = 1e-8;

/// How tokens attend to one another inside a block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfAttentionMode {
    /// Slice into `M_state` states, attend among states, deslice.
    #[default]
    States,
    /// Dense token-to-token attention; quadratic in the token count.
    Tokens,
}

/// Row-stochastic slice weights with the aggregated state tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsStateSlices {
    /// `N × M_state`.
    pub weights: Var,
    /// `M_state × d_model`.
    pub states: Var,
}

/// `w = softmax(H W_slice)`, `Z_k = Σ_i w_ik H_i / (Σ_i w_ik + ε)`.
pub fn slice_project<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    w_slice: Var,
) -> Result<PhysicsStateSlices> {
    if g.shape(w_slice).1 == 0 {
        return Err(Error::InvalidArgument("M_state must be >= 1".into()));
    }
    let logits = g.matmul(h, w_slice)?;
    let weights = g.softmax_rows(logits);
    let num = g.matmul_tn(weights, h)?;
    let mass = g.sum_rows(weights);
    let mass = g.transpose(mass);
    let mass = g.add_const(mass, T::lit(SLICE_EPS));
    let states = g.div_col(num, mass)?;
    Ok(PhysicsStateSlices { weights, states })
}

/// `out_i = Σ_k w_ik Z_k`.
pub fn deslice<T: Scalar>(
    g: &mut Graph<T>,
    slices: &PhysicsStateSlices,
    z_new: Var,
) -> Result<Var> {
    let (m, d) = g.shape(slices.states);
    if g.shape(z_new) != (m, d) {
        return Err(Error::dim(
            "deslice",
            format!("expected {m}x{d} states, got {:?}", g.shape(z_new)),
        ));
    }
    g.matmul(slices.weights, z_new)
}

/// Scalar gate and the blended attention output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateMix {
    /// `1 × 1`, strictly inside `(0, 1)`.
    pub alpha: Var,
    pub mixed: Var,
}

/// `(1 − α)·SA + α·CA` for `α = sigmoid(logit)`.
pub fn mix_with_logit<T: Scalar>(
    g: &mut Graph<T>,
    sa: Var,
    ca: Var,
    logit: Var,
) -> Result<GateMix> {
    if g.shape(logit) != (1, 1) {
        return Err(Error::dim(
            "gate",
            format!("logit must be 1x1, got {:?}", g.shape(logit)),
        ));
    }
    let alpha = g.activation(logit, Activation::Sigmoid);
    let diff = g.sub(ca, sa)?;
    let step = g.scale_by(alpha, diff)?;
    let mixed = g.add(sa, step)?;
    Ok(GateMix { alpha, mixed })
}

/// Gate driven by `η([mean(SA), mean(C)])`.
pub fn adaptive_gate_mix<T: Scalar>(
    g: &mut Graph<T>,
    sa: Var,
    ca: Var,
    context: Var,
    eta: &Mlp,
) -> Result<GateMix> {
    let pooled_sa = g.mean_rows(sa)?;
    let pooled_c = g.mean_rows(context)?;
    let input = g.concat_cols(&[pooled_sa, pooled_c])?;
    let logit = eta.forward(g, input)?;
    mix_with_logit(g, sa, ca, logit)
}

/// `H + MLP(H)`.
pub fn ffn_residual<T: Scalar>(g: &mut Graph<T>, h: Var, ffn: &Mlp) -> Result<Var> {
    let f = ffn.forward(g, h)?;
    g.add(h, f)
}

/// Shape hyperparameters shared by every block of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaleDims {
    pub d_model: usize,
    pub d_c: usize,
    pub m_state: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub gate_hidden: usize,
    pub mode: SelfAttentionMode,
    /// Add the block input back onto the gated attention output.
    pub attn_residual: bool,
    pub ln_eps: f64,
}

impl GaleDims {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.d_model,
            self.d_c,
            self.m_state,
            self.heads,
            self.ffn_hidden,
            self.gate_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config(format!(
                "block widths must be >= 1: {self:?}"
            )));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Intermediate values of one block forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockTrace {
    pub normed: Var,
    pub sa: Var,
    pub ca: Var,
    pub alpha: Var,
    pub mixed: Var,
    pub out: Var,
}

/// Parameter names of one block for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct GaleBlock {
    pub dims: GaleDims,
    pub ln1: (String, String),
    pub slice: String,
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wq_c: String,
    pub wk_c: String,
    pub wv_c: String,
    pub gate: Mlp,
    pub ln2: (String, String),
    pub ffn: Mlp,
}

impl GaleBlock {
    pub fn new(prefix: &str, dims: GaleDims) -> Result<Self> {
        dims.validate()?;
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            ln1: (n("ln1.gamma"), n("ln1.beta")),
            slice: n("slice.weight"),
            wq: n("attn.wq"),
            wk: n("attn.wk"),
            wv: n("attn.wv"),
            wq_c: n("cross.wq"),
            wk_c: n("cross.wk"),
            wv_c: n("cross.wv"),
            gate: Mlp::new(
                &n("gate"),
                &[dims.d_model + dims.d_c, dims.gate_hidden, 1],
                Activation::Gelu,
                Activation::Identity,
            )?,
            ln2: (n("ln2.gamma"), n("ln2.beta")),
            ffn: Mlp::new(
                &n("ffn"),
                &[dims.d_model, dims.ffn_hidden, dims.d_model],
                Activation::Gelu,
                Activation::Identity,
            )?,
            dims,
        })
    }

    fn matrices(&self) -> [(&str, usize, usize); 7] {
        let d = &self.dims;
        [
            (&self.slice, d.d_model, d.m_state),
            (&self.wq, d.d_model, d.d_model),
            (&self.wk, d.d_model, d.d_model),
            (&self.wv, d.d_model, d.d_model),
            (&self.wq_c, d.d_model, d.d_model),
            (&self.wk_c, d.d_c, d.d_model),
            (&self.wv_c, d.d_c, d.d_model),
        ]
    }

    /// Projections get fan-in-scaled uniform noise, norms start at the
    /// identity, and the gate's last layer is zeroed so that `α = 0.5`.
    pub fn init_params<T: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        let d = self.dims.d_model;
        for (gamma, beta) in [&self.ln1, &self.ln2] {
            store.insert(gamma, Tensor::filled(1, d, T::one()))?;
            store.insert(beta, Tensor::zeros(1, d))?;
        }
        for (name, fan_in, fan_out) in self.matrices() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            store.insert(name, Tensor::uniform(fan_in, fan_out, bound, rng))?;
        }
        self.gate.init_params(store, rng)?;
        let last = self.gate.last_layer();
        for name in [&last.weight, &last.bias] {
            let t = store.get_mut(name).expect("gate layer registered");
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        self.ffn.init_params(store, rng)
    }

    pub fn num_scalars(&self) -> usize {
        let matrices: usize = self.matrices().iter().map(|(_, r, c)| r * c).sum();
        4 * self.dims.d_model + matrices + self.gate.num_scalars() + self.ffn.num_scalars()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            self.ln1.0.clone(),
            self.ln1.1.clone(),
            self.ln2.0.clone(),
            self.ln2.1.clone(),
        ];
        names.extend(self.matrices().iter().map(|(n, _, _)| n.to_string()));
        for mlp in [&self.gate, &self.ffn] {
            for l in &mlp.layers {
                names.push(l.weight.clone());
                names.push(l.bias.clone());
            }
        }
        names
    }

    fn eps<T: Scalar>(&self) -> T {
        T::lit(self.dims.ln_eps)
    }

    pub fn norm1<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        let gamma = g.param(&self.ln1.0)?;
        let beta = g.param(&self.ln1.1)?;
        g.layer_norm(h, gamma, beta, self.eps())
    }

    pub fn norm2<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        let gamma = g.param(&self.ln2.0)?;
        let beta = g.param(&self.ln2.1)?;
        g.layer_norm(h, gamma, beta, self.eps())
    }

    pub fn slice_project<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Result<PhysicsStateSlices> {
        let w = g.param(&self.slice)?;
        slice_project(g, h, w)
    }

    /// Self-attention in the configured mode.
    pub fn self_attention<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        match self.dims.mode {
            SelfAttentionMode::States => {
                let slices = self.slice_project(g, h)?;
                let z_new = self.attend(g, slices.states)?;
                deslice(g, &slices, z_new)
            }
            SelfAttentionMode::Tokens => self.attend(g, h),
        }
    }

    fn attend<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (wq, wk, wv) = (g.param(&self.wq)?, g.param(&self.wk)?, g.param(&self.wv)?);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        multi_head_attention(g, q, k, v, self.dims.heads)
    }

    /// Token queries against the context rows.
    pub fn cross_attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        context: Var,
    ) -> Result<Var> {
        if g.shape(context).0 == 0 {
            return Err(Error::EmptyInput("context has no tokens".into()));
        }
        let (wq, wk, wv) = (
            g.param(&self.wq_c)?,
            g.param(&self.wk_c)?,
            g.param(&self.wv_c)?,
        );
        let q = g.matmul(h, wq)?;
        let k = g.matmul(context, wk)?;
        let v = g.matmul(context, wv)?;
        multi_head_attention(g, q, k, v, self.dims.heads)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, h: Var, context: Var) -> Result<Var> {
        Ok(self.forward_traced(g, h, context)?.out)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        h: Var,
        context: Var,
    ) -> Result<BlockTrace> {
        let d = self.dims.d_model;
        if g.shape(h).1 != d {
            return Err(Error::dim(
                "gale_block_forward",
                format!("hidden width {} vs d_model {d}", g.shape(h).1),
            ));
        }
        if g.shape(context).1 != self.dims.d_c {
            return Err(Error::dim(
                "gale_block_forward",
                format!(
                    "context width {} vs d_c {}",
                    g.shape(context).1,
                    self.dims.d_c
                ),
            ));
        }
        let normed = self.norm1(g, h)?;
        let sa = self.self_attention(g, normed)?;
        let ca = self.cross_attention(g, normed, context)?;
        let GateMix { alpha, mixed } = adaptive_gate_mix(g, sa, ca, context, &self.gate)?;
        let mid = if self.dims.attn_residual {
            g.add(h, mixed)?
        } else {
            mixed
        };
        let n2 = self.norm2(g, mid)?;
        let f = self.ffn.forward(g, n2)?;
        let out = g.add(mid, f)?;
        Ok(BlockTrace {
            normed,
            sa,
            ca,
            alpha,
            mixed,
            out,
        })
    }
}
