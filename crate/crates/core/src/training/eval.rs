use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Case, Normalizer, StreamSchema, SURFACE};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::metrics::{
    cp_square_integral, surface_force, CaseMetrics, FieldError, MetricReport, SurfaceQuadrature,
};
use crate::model::{Model, ModelConfig, PreparedCase, Sample};
use crate::numerics::{gradcheck, GradcheckReport, Graph, ParamStore, Tensor};
use crate::scalar::Scalar;

use super::{compute_loss, LossKind, TrainConfig};

/// Reported error groups of a stream: one per output column, plus
/// `velocity` for `u, v, w` and `tau` for `tau_x, tau_y, tau_z` when all
/// three are present. Names are `stream.group`.
pub fn field_groups(schema: &StreamSchema) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = schema
        .outputs
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("{}.{c}", schema.name), vec![i]))
        .collect();
    let find = |names: [&str; 3]| -> Option<Vec<usize>> {
        names
            .iter()
            .map(|n| schema.outputs.iter().position(|o| o == n))
            .collect()
    };
    if let Some(idx) = find(["u", "v", "w"]) {
        out.push((format!("{}.velocity", schema.name), idx));
    }
    if let Some(idx) = find(["tau_x", "tau_y", "tau_z"]) {
        out.push((format!("{}.tau", schema.name), idx));
    }
    out
}

fn columns(t: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let mut out = Tensor::zeros(t.rows(), idx.len());
    for r in 0..t.rows() {
        for (k, &c) in idx.iter().enumerate() {
            out.set(r, k, t.get(r, c));
        }
    }
    out
}

fn points(t: &Tensor<f64>) -> Vec<Point> {
    (0..t.rows())
        .map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)])
        .collect()
}

/// Model outputs for every point of `case`, in physical units.
///
/// The geometry view is drawn from `seed` so repeated calls agree.
pub fn predict_physical<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    case: &Case,
    norm: &Normalizer,
    seed: u64,
) -> Result<Vec<Tensor<f64>>> {
    let cfg = model.config();
    let prepared = PreparedCase::new(case, cfg, norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = prepared.full_sample(cfg, &mut rng);
    let raw = model.predict_chunked(store, &sample, cfg.query_token_cap)?;
    cfg.streams
        .iter()
        .zip(raw)
        .map(|(s, t)| norm.stream(&s.name)?.targets.invert(&t.cast()))
        .collect()
}

struct SurfaceTotals {
    force_true: Point,
    force_pred: Point,
    j_true: f64,
    j_pred: f64,
}

fn surface_totals(case: &Case, schema: &StreamSchema, pred: &Tensor<f64>) -> Result<SurfaceTotals> {
    let table = case.stream(&schema.name)?;
    let normals = points(&table.select(&["nx".into(), "ny".into(), "nz".into()])?);
    let area = table.column("area")?;
    let cp_col = schema
        .outputs
        .iter()
        .position(|o| o == "cp")
        .ok_or_else(|| Error::Data(format!("stream `{}` does not predict cp", schema.name)))?;
    let cp_true = table.column("cp")?;
    let cp_pred: Vec<f64> = (0..pred.rows()).map(|r| pred.get(r, cp_col)).collect();
    let q = 0.5 * case.spec.speed * case.spec.speed;
    let tau_names: Vec<String> = ["tau_x", "tau_y", "tau_z"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let shear_true = match table.select(&tau_names) {
        Ok(t) => points(&t),
        Err(_) => vec![[0.0; 3]; table.len()],
    };
    let shear_pred = match field_groups(schema)
        .into_iter()
        .find(|(n, _)| n.ends_with(".tau"))
    {
        Some((_, idx)) => points(&columns(pred, &idx)),
        None => vec![[0.0; 3]; pred.rows()],
    };
    let force = |cp: &[f64], shear: Vec<Point>| -> Result<Point> {
        let pressure = cp.iter().map(|c| q * c).collect();
        Ok(surface_force(&SurfaceQuadrature::new(
            normals.clone(),
            area.clone(),
            pressure,
            0.0,
            shear,
        )?))
    };
    Ok(SurfaceTotals {
        force_true: force(&cp_true, shear_true)?,
        force_pred: force(&cp_pred, shear_pred)?,
        j_true: cp_square_integral(&cp_true, &area),
        j_pred: cp_square_integral(&cp_pred, &area),
    })
}

/// Builds the report from physical-unit predictions, `preds[c][m]` being
/// stream `m` of case `c`. Forces use `Δp = ½U²Cp` with the surface
/// table's normals and area weights; `J = Σ Cp² dS`.
pub fn metric_report(
    cases: &[Case],
    preds: &[Vec<Tensor<f64>>],
    streams: &[StreamSchema],
) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::Data("evaluation needs at least one case".into()));
    }
    if cases.len() != preds.len() {
        return Err(Error::dim(
            "metric_report",
            format!("{} cases, {} predictions", cases.len(), preds.len()),
        ));
    }
    let groups: Vec<(usize, String, Vec<usize>)> = streams
        .iter()
        .enumerate()
        .flat_map(|(m, s)| field_groups(s).into_iter().map(move |(n, idx)| (m, n, idx)))
        .collect();
    let names: Vec<String> = groups.iter().map(|(_, n, _)| n.clone()).collect();
    let mut truth = vec![Vec::with_capacity(cases.len()); groups.len()];
    let mut pred = vec![Vec::with_capacity(cases.len()); groups.len()];
    let mut rows = Vec::with_capacity(cases.len());
    let surface = streams
        .iter()
        .position(|s| s.name == SURFACE && s.outputs.iter().any(|o| o == "cp"));
    for (case, p) in cases.iter().zip(preds) {
        if p.len() != streams.len() {
            return Err(Error::dim(
                "metric_report",
                format!("{} predicted streams", p.len()),
            ));
        }
        let mut fields = Vec::with_capacity(groups.len());
        for (g, (m, name, idx)) in groups.iter().enumerate() {
            let schema = &streams[*m];
            let t = case.stream(&schema.name)?.select(&schema.outputs)?;
            let t = columns(&t, idx);
            let q = columns(&p[*m], idx);
            fields.push(FieldError::between(name, &t, &q)?);
            truth[g].push(t);
            pred[g].push(q);
        }
        let totals = match surface {
            Some(m) => surface_totals(case, &streams[m], &p[m])?,
            None => SurfaceTotals {
                force_true: [0.0; 3],
                force_pred: [0.0; 3],
                j_true: 0.0,
                j_pred: 0.0,
            },
        };
        rows.push(CaseMetrics {
            id: case.id().to_string(),
            fields,
            force_true: totals.force_true,
            force_pred: totals.force_pred,
            j_true: totals.j_true,
            j_pred: totals.j_pred,
        });
    }
    MetricReport::build(rows, &names, &truth, &pred)
}

/// Physical-unit metrics of `store` on `cases`.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    cases: &[Case],
    norm: &Normalizer,
    seed: u64,
) -> Result<MetricReport> {
    let preds = cases
        .iter()
        .map(|c| predict_physical(model, store, c, norm, seed))
        .collect::<Result<Vec<_>>>()?;
    metric_report(cases, &preds, &model.config().streams)
}

/// Mean normalised loss over every token of each prepared case.
pub fn evaluate_loss<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    cases: &[PreparedCase],
    config: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Data("evaluation needs at least one case".into()));
    }
    let cfg = model.config();
    let weights = config.weights(cfg.streams.len())?;
    let mut total = 0.0;
    for c in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = c.full_sample(cfg, &mut rng);
        let pred = model.predict_chunked(store, &sample, cfg.query_token_cap)?;
        let mut g = Graph::<f64>::new();
        let vars: Vec<_> = pred.iter().map(|p| g.constant(p.cast())).collect();
        let l = compute_loss(&mut g, &vars, &c.targets, config.loss, &weights)?;
        total += g.value(l).get(0, 0);
    }
    Ok(total / cases.len() as f64)
}

/// Finite-difference check of every parameter of the tiny configuration on
/// 8 surface and 12 volume tokens, in 64-bit with step `1e-6`.
///
/// All parameters are perturbed away from their initial values so that no
/// gradient is structurally zero.
pub fn tiny_gradcheck(seed: u64) -> Result<GradcheckReport> {
    use rand::Rng;

    let cfg = ModelConfig {
        seed,
        ..ModelConfig::tiny()
    };
    let model = Model::new(cfg.clone())?;
    let mut store = model.init_params::<f64>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for (_, t) in store.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    let sample = Sample::random(&cfg, &[8, 12], 10, seed)?;
    let targets: Vec<Tensor<f64>> = cfg
        .streams
        .iter()
        .zip(&sample.streams)
        .map(|(s, l)| Tensor::uniform(l.len(), s.outputs.len(), 1.0, &mut rng))
        .collect();
    let weights = vec![1.0; cfg.streams.len()];
    gradcheck(
        |g| {
            let pass = model.forward(g, &sample)?;
            compute_loss(g, &pass.outputs, &targets, LossKind::Mse, &weights)
        },
        &store,
        1e-6,
    )
}
