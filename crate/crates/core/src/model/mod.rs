//! The full network: input encoding with one-time ball-query augmentation,
//! a stack of GALE blocks per stream sharing one context, and output heads.

mod checkpoint;
mod config;
mod sample;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{
    build_context, geom_to_input_features, ContextModules, ContextTokens, GeometrySample,
    LocalStream,
};
use crate::error::{Error, Result};
use crate::gale::GaleBlock;
use crate::geometry::PointSet;
use crate::numerics::{Activation, Graph, Mlp, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use sample::{subsample_indices, PreparedCase};

/// Inputs of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// In the order of the configured streams.
    pub streams: Vec<LocalStream>,
    pub geometry: GeometrySample,
}

impl Sample {
    pub fn total_tokens(&self) -> usize {
        self.streams.iter().map(LocalStream::len).sum()
    }

    /// Uniform random points in `[-1.5, 1.5]³` with uniform features in
    /// `[-1, 1]`; `sizes` gives the token count of each configured stream.
    pub fn random(config: &ModelConfig, sizes: &[usize], n_geom: usize, seed: u64) -> Result<Self> {
        if sizes.len() != config.streams.len() {
            return Err(Error::Sample(format!(
                "{} stream sizes for {} streams",
                sizes.len(),
                config.streams.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = |n: usize, rng: &mut ChaCha8Rng| {
            PointSet::new(
                (0..n)
                    .map(|_| {
                        [
                            rng.gen_range(-1.5..1.5),
                            rng.gen_range(-1.5..1.5),
                            rng.gen_range(-1.5..1.5),
                        ]
                    })
                    .collect(),
            )
        };
        let mut streams = Vec::with_capacity(sizes.len());
        for (s, &n) in config.streams.iter().zip(sizes) {
            let p = pts(n, &mut rng)?;
            streams.push(LocalStream::new(
                &s.name,
                p,
                Tensor::uniform(n, config.d_x, 1.0, &mut rng),
            )?);
        }
        let gp = pts(n_geom, &mut rng)?;
        let geometry = GeometrySample::new(
            gp,
            Tensor::uniform(n_geom, config.d_g, 1.0, &mut rng),
            (0..config.d_p).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        Ok(Self { streams, geometry })
    }
}

/// Per-stream modules.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamModules {
    pub name: String,
    /// `P_m`: `[f ⊕ x] → d_model`.
    pub encode: Mlp,
    /// `Q_m`: `U_m → d_model`; absent when augmentation is disabled.
    pub augment: Option<Mlp>,
    pub blocks: Vec<GaleBlock>,
    pub head_ln: (String, String),
    pub head: Mlp,
}

/// Outputs and intermediate handles of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub outputs: Vec<Var>,
    pub context: ContextTokens,
    /// `alphas[layer][stream]`.
    pub alphas: Vec<Vec<Var>>,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    pub context: ContextModules,
    /// `ψ_s`, one per scale.
    pub psi: Vec<Mlp>,
    pub streams: Vec<StreamModules>,
    context_builds: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            context: self.context.clone(),
            psi: self.psi.clone(),
            streams: self.streams.clone(),
            context_builds: AtomicUsize::new(self.context_builds()),
        }
    }
}

fn mlp(name: &str, widths: &[usize]) -> Result<Mlp> {
    Mlp::new(name, widths, Activation::Gelu, Activation::Identity)
}

impl Model {
    /// Module wiring for `config`; parameters live in a separate store.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let s = c.schedule.len();
        let context = ContextModules {
            embed_p: mlp("context.embed_p", &[c.d_p, c.hidden, c.d_c])?,
            rho: mlp("context.rho", &[c.d_g, c.hidden, c.d_c])?,
            phi: (0..s)
                .map(|i| mlp(&format!("context.phi{i}"), &[c.d_x + 3, c.hidden, c.d_c]))
                .collect::<Result<_>>()?,
            pool: c.pool,
        };
        let psi = if c.augmentation_enabled {
            (0..s)
                .map(|i| mlp(&format!("augment.psi{i}"), &[c.d_g + 3, c.hidden, c.d_bq]))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let streams = c
            .streams
            .iter()
            .map(|st| {
                let n = &st.name;
                Ok(StreamModules {
                    name: n.clone(),
                    encode: mlp(&format!("{n}.encode"), &[c.d_x + 3, c.d_model, c.d_model])?,
                    augment: if c.augmentation_enabled {
                        Some(mlp(
                            &format!("{n}.augment"),
                            &[s * c.d_bq, c.d_model, c.d_model],
                        )?)
                    } else {
                        None
                    },
                    blocks: (0..c.layers)
                        .map(|l| GaleBlock::new(&format!("{n}.block{l}"), c.gale_dims()))
                        .collect::<Result<_>>()?,
                    head_ln: (format!("{n}.head.ln.gamma"), format!("{n}.head.ln.beta")),
                    head: mlp(
                        &format!("{n}.head"),
                        &[c.d_model, c.d_model, st.outputs.len()],
                    )?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            context,
            psi,
            streams,
            context_builds: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters drawn from `config.seed`.
    pub fn init_params<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut store = ParamStore::new();
        self.context.embed_p.init_params(&mut store, &mut rng)?;
        self.context.rho.init_params(&mut store, &mut rng)?;
        for m in self.context.phi.iter().chain(&self.psi) {
            m.init_params(&mut store, &mut rng)?;
        }
        for s in &self.streams {
            s.encode.init_params(&mut store, &mut rng)?;
            if let Some(q) = &s.augment {
                q.init_params(&mut store, &mut rng)?;
            }
            for b in &s.blocks {
                b.init_params(&mut store, &mut rng)?;
            }
            store.insert(
                &s.head_ln.0,
                Tensor::filled(1, self.config.d_model, T::one()),
            )?;
            store.insert(&s.head_ln.1, Tensor::zeros(1, self.config.d_model))?;
            s.head.init_params(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// Learnable scalar count, from module shapes alone.
    pub fn num_params(&self) -> usize {
        let ctx = self.context.embed_p.num_scalars()
            + self.context.rho.num_scalars()
            + self.context.phi.iter().map(Mlp::num_scalars).sum::<usize>();
        let psi: usize = self.psi.iter().map(Mlp::num_scalars).sum();
        let streams: usize = self
            .streams
            .iter()
            .map(|s| {
                s.encode.num_scalars()
                    + s.augment.as_ref().map_or(0, Mlp::num_scalars)
                    + s.blocks.iter().map(GaleBlock::num_scalars).sum::<usize>()
                    + 2 * self.config.d_model
                    + s.head.num_scalars()
            })
            .sum();
        ctx + psi + streams
    }

    /// Checks that `store` holds exactly the parameters this wiring expects.
    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        let expected = self.init_params::<f32>()?;
        for (name, t) in expected.iter() {
            match store.get(name) {
                None => {
                    return Err(Error::dim(
                        "check_params",
                        format!("missing parameter `{name}`"),
                    ))
                }
                Some(s) if s.shape() != t.shape() => {
                    return Err(Error::dim(
                        "check_params",
                        format!(
                            "parameter `{name}` has shape {:?}, model expects {:?}",
                            s.shape(),
                            t.shape()
                        ),
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = store.names().find(|n| !expected.contains(n)) {
            return Err(Error::dim(
                "check_params",
                format!("unexpected parameter `{extra}`"),
            ));
        }
        Ok(())
    }

    /// Number of context builds since construction.
    pub fn context_builds(&self) -> usize {
        self.context_builds.load(Ordering::Relaxed)
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let c = &self.config;
        if sample.streams.len() != c.streams.len() {
            return Err(Error::Sample(format!(
                "{} streams given, model has {}",
                sample.streams.len(),
                c.streams.len()
            )));
        }
        for (s, cfg) in sample.streams.iter().zip(&c.streams) {
            if s.name != cfg.name {
                return Err(Error::Sample(format!(
                    "stream `{}` where `{}` was expected",
                    s.name, cfg.name
                )));
            }
            if s.features.cols() != c.d_x {
                return Err(Error::Sample(format!(
                    "stream `{}` has feature width {}, model expects {}",
                    s.name,
                    s.features.cols(),
                    c.d_x
                )));
            }
            if s.is_empty() {
                return Err(Error::Sample(format!("stream `{}` has no tokens", s.name)));
            }
        }
        if sample.geometry.feature_width() != c.d_g || sample.geometry.global.len() != c.d_p {
            return Err(Error::Sample(format!(
                "geometry widths ({}, {}) differ from d_g = {}, d_p = {}",
                sample.geometry.feature_width(),
                sample.geometry.global.len(),
                c.d_g,
                c.d_p
            )));
        }
        Ok(())
    }

    /// `H̃⁽⁰⁾ = P_m([f, x]) + Q_m(U_m)`, the second term only with
    /// augmentation enabled.
    pub fn encode_inputs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        stream_index: usize,
        stream: &LocalStream,
        geometry: &GeometrySample,
    ) -> Result<Var> {
        let m = &self.streams[stream_index];
        let n = stream.len();
        let mut data = Vec::with_capacity(n * (self.config.d_x + 3));
        for i in 0..n {
            data.extend(stream.features.row(i).iter().map(|&v| T::lit(v)));
            data.extend(stream.positions.get(i).iter().map(|&v| T::lit(v)));
        }
        let x = g.constant(Tensor::from_vec(n, stream.features.cols() + 3, data)?);
        let h = m.encode.forward(g, x)?;
        match &m.augment {
            Some(q) => {
                let u =
                    geom_to_input_features(g, stream, geometry, &self.config.schedule, &self.psi)?;
                let qu = q.forward(g, u)?;
                g.add(h, qu)
            }
            None => Ok(h),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, sample: &Sample) -> Result<ForwardPass> {
        self.check_sample(sample)?;
        let refs: Vec<&LocalStream> = sample.streams.iter().collect();
        let context = build_context(
            g,
            &refs,
            &sample.geometry,
            &self.config.schedule,
            &self.context,
        )?;
        self.context_builds.fetch_add(1, Ordering::Relaxed);

        let mut hidden = sample
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| self.encode_inputs(g, i, s, &sample.geometry))
            .collect::<Result<Vec<_>>>()?;
        let mut alphas = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let mut layer = Vec::with_capacity(hidden.len());
            for (m, h) in self.streams.iter().zip(hidden.iter_mut()) {
                let t = m.blocks[l].forward_traced(g, *h, context.tokens)?;
                *h = t.out;
                layer.push(t.alpha);
            }
            alphas.push(layer);
        }
        let outputs = self
            .streams
            .iter()
            .zip(hidden)
            .map(|(m, h)| {
                let gamma = g.param(&m.head_ln.0)?;
                let beta = g.param(&m.head_ln.1)?;
                let n = g.layer_norm(h, gamma, beta, T::lit(self.config.ln_eps))?;
                m.head.forward(g, n)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass {
            outputs,
            context,
            alphas,
        })
    }

    /// Predictions of a single forward pass.
    pub fn predict<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        sample: &Sample,
    ) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::with_params(store);
        let pass = self.forward(&mut g, sample)?;
        Ok(pass.outputs.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Predictions over every token with at most about `cap` tokens per pass.
    /// Each pass takes an interleaved share of every stream so that token
    /// densities match those seen in training.
    pub fn predict_chunked<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        sample: &Sample,
        cap: usize,
    ) -> Result<Vec<Tensor<T>>> {
        let total = sample.total_tokens();
        let min_len = sample
            .streams
            .iter()
            .map(LocalStream::len)
            .min()
            .unwrap_or(0);
        let chunks = total.div_ceil(cap.max(1)).min(min_len).max(1);
        if chunks == 1 {
            return self.predict(store, sample);
        }
        let mut out: Vec<Tensor<T>> = self
            .config
            .streams
            .iter()
            .zip(&sample.streams)
            .map(|(cfg, s)| Tensor::zeros(s.len(), cfg.outputs.len()))
            .collect();
        for c in 0..chunks {
            let idx: Vec<Vec<usize>> = sample
                .streams
                .iter()
                .map(|s| (c..s.len()).step_by(chunks).collect())
                .collect();
            let part = Sample {
                streams: sample
                    .streams
                    .iter()
                    .zip(&idx)
                    .map(|(s, i)| s.select(i))
                    .collect(),
                geometry: sample.geometry.clone(),
            };
            let pred = self.predict(store, &part)?;
            for ((dst, src), rows) in out.iter_mut().zip(pred).zip(&idx) {
                for (k, &r) in rows.iter().enumerate() {
                    dst.row_mut(r).copy_from_slice(src.row(k));
                }
            }
        }
        Ok(out)
    }

    /// Parameter names grouped by module prefix.
    pub fn param_groups<T: Scalar>(&self, store: &ParamStore<T>) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, t) in store.iter() {
            let key = name.split('.').next().unwrap_or(name).to_string();
            *out.entry(key).or_insert(0) += t.len();
        }
        out
    }
}

/// Wiring plus freshly initialised parameters.
pub fn init_model<T: Scalar>(config: ModelConfig) -> Result<(Model, ParamStore<T>)> {
    let model = Model::new(config)?;
    let store = model.init_params()?;
    Ok((model, store))
}
