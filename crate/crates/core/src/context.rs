//! Ball-query products: per-token geometry augmentation and the shared
//! context token sequence attended to by every block.
//!
//! Both directions follow the same pattern: gather `[feature, offset]` rows
//! for every `(query, neighbour)` pair, push them through a per-scale MLP and
//! average back per query. Empty neighbourhoods contribute a zero vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    ball_query, MultiScaleSchedule, NeighborList, PointSet, QueryMode, SpatialIndex,
};
use crate::numerics::{Graph, Mlp, Tensor, Var};
use crate::scalar::Scalar;

/// Geometry points with per-point features and the global parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometrySample {
    pub points: PointSet,
    /// `M_g × d_g`.
    pub features: Tensor<f64>,
    pub global: Vec<f64>,
}

impl GeometrySample {
    pub fn new(points: PointSet, features: Tensor<f64>, global: Vec<f64>) -> Result<Self> {
        if features.rows() != points.len() {
            return Err(Error::Sample(format!(
                "{} geometry points but {} feature rows",
                points.len(),
                features.rows()
            )));
        }
        if !features.is_finite() || global.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sample("geometry values must be finite".into()));
        }
        Ok(Self {
            points,
            features,
            global,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: self.points.select(idx),
            features: self.features.select_rows(idx),
            global: self.global.clone(),
        }
    }
}

/// One group of prediction points.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStream {
    pub name: String,
    pub positions: PointSet,
    /// `N_m × d_x`.
    pub features: Tensor<f64>,
}

impl LocalStream {
    pub fn new(
        name: impl Into<String>,
        positions: PointSet,
        features: Tensor<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if features.rows() != positions.len() {
            return Err(Error::Sample(format!(
                "stream `{name}`: {} positions but {} feature rows",
                positions.len(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Sample(format!(
                "stream `{name}`: non-finite features"
            )));
        }
        Ok(Self {
            name,
            positions,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            positions: self.positions.select(idx),
            features: self.features.select_rows(idx),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

/// Permutation-invariant reduction `n × d → 1 × d`.
pub fn pool_reduce<T: Scalar>(g: &mut Graph<T>, rows: Var, mode: PoolMode) -> Result<Var> {
    match mode {
        PoolMode::Mean => g.mean_rows(rows),
        PoolMode::Max => g.max_rows(rows),
    }
}

/// `[feature_j, target_j − query_i]` for every neighbour entry, in list order.
fn neighbor_rows<T: Scalar>(features: &Tensor<f64>, list: &NeighborList) -> Tensor<T> {
    let fw = features.cols();
    let width = fw + 3;
    let mut data = Vec::with_capacity(list.total() * width);
    for n in list.entries() {
        data.extend(features.row(n.index).iter().map(|&v| T::lit(v)));
        data.extend(n.offset.iter().map(|&v| T::lit(v)));
    }
    Tensor::from_vec(list.total(), width, data).expect("row width")
}

fn check_mlps(
    kind: &str,
    mlps: &[Mlp],
    schedule: &MultiScaleSchedule,
    in_width: usize,
) -> Result<()> {
    if mlps.len() != schedule.len() {
        return Err(Error::dim(
            "ball-query features",
            format!("{} {kind} MLPs for {} scales", mlps.len(), schedule.len()),
        ));
    }
    if let Some(m) = mlps.iter().find(|m| m.in_width() != in_width) {
        return Err(Error::dim(
            "ball-query features",
            format!(
                "{kind} MLP expects width {}, rows have {in_width}",
                m.in_width()
            ),
        ));
    }
    Ok(())
}

/// Per-scale neighbour lists of `queries` among `targets`, each scale using a
/// grid with cell size equal to its radius.
pub fn multi_scale_neighbors(
    targets: &PointSet,
    queries: &PointSet,
    schedule: &MultiScaleSchedule,
) -> Result<Vec<NeighborList>> {
    schedule
        .scales()
        .iter()
        .map(|s| {
            let index = SpatialIndex::build(targets, s.radius)?;
            ball_query(&index, queries, s.radius, s.cap, QueryMode::Indexed)
        })
        .collect()
}

fn aggregate<T: Scalar>(
    g: &mut Graph<T>,
    features: &Tensor<f64>,
    lists: &[NeighborList],
    mlps: &[Mlp],
) -> Result<Vec<Var>> {
    lists
        .iter()
        .zip(mlps)
        .map(|(list, mlp)| {
            let rows = g.constant(neighbor_rows(features, list));
            let h = mlp.forward(g, rows)?;
            g.segment_mean(h, list.offsets())
        })
        .collect()
}

/// `U_m`: for every stream token, the per-scale mean of
/// `ψ_s([γ_j, g_j − x_i])` over its geometry neighbours, concatenated across
/// scales (`N_m × S·d_bq`).
pub fn geom_to_input_features<T: Scalar>(
    g: &mut Graph<T>,
    stream: &LocalStream,
    geom: &GeometrySample,
    schedule: &MultiScaleSchedule,
    psi: &[Mlp],
) -> Result<Var> {
    check_mlps("psi", psi, schedule, geom.feature_width() + 3)?;
    let lists = multi_scale_neighbors(&geom.points, &stream.positions, schedule)?;
    let parts = aggregate(g, &geom.features, &lists, psi)?;
    g.concat_cols(&parts)
}

/// `h^inp_{j,s}`: for every geometry point, the per-scale mean of
/// `φ_s([f, x − g_j])` over stream tokens in its ball, drawn from the union of
/// all streams. One `M_g × d_c` tensor per scale.
pub fn input_to_geom_features<T: Scalar>(
    g: &mut Graph<T>,
    streams: &[&LocalStream],
    geom: &GeometrySample,
    schedule: &MultiScaleSchedule,
    phi: &[Mlp],
) -> Result<Vec<Var>> {
    let d_x = streams.first().map_or(0, |s| s.features.cols());
    if let Some(s) = streams.iter().find(|s| s.features.cols() != d_x) {
        return Err(Error::dim(
            "input_to_geom_features",
            format!(
                "stream `{}` has feature width {}, expected {d_x}",
                s.name,
                s.features.cols()
            ),
        ));
    }
    check_mlps("phi", phi, schedule, d_x + 3)?;
    let positions = PointSet::concat(streams.iter().map(|s| &s.positions));
    let mut data = Vec::new();
    for s in streams {
        data.extend_from_slice(s.features.data());
    }
    let features = Tensor::from_vec(positions.len(), d_x, data)?;
    let lists = multi_scale_neighbors(&positions, &geom.points, schedule)?;
    aggregate(g, &features, &lists, phi)
}

/// MLPs that produce the context rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextModules {
    /// `d_p → d_c`.
    pub embed_p: Mlp,
    /// `d_g → d_c`.
    pub rho: Mlp,
    /// One `d_x + 3 → d_c` MLP per scale.
    pub phi: Vec<Mlp>,
    pub pool: PoolMode,
}

/// `(S + 2) × d_c` token matrix: row 0 embeds the global parameters, row 1
/// pools the geometry embedding, rows `2..` pool each scale's
/// input-to-geometry features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextTokens {
    pub tokens: Var,
    pub scales: usize,
}

impl ContextTokens {
    pub fn rows(&self) -> usize {
        self.scales + 2
    }
}

pub fn build_context<T: Scalar>(
    g: &mut Graph<T>,
    streams: &[&LocalStream],
    geom: &GeometrySample,
    schedule: &MultiScaleSchedule,
    modules: &ContextModules,
) -> Result<ContextTokens> {
    if geom.is_empty() {
        return Err(Error::Sample("geometry has zero points".into()));
    }
    if geom.global.len() != modules.embed_p.in_width() {
        return Err(Error::dim(
            "build_context",
            format!(
                "global vector has width {}, embedding expects {}",
                geom.global.len(),
                modules.embed_p.in_width()
            ),
        ));
    }
    if geom.feature_width() != modules.rho.in_width() {
        return Err(Error::dim(
            "build_context",
            format!(
                "geometry features have width {}, rho expects {}",
                geom.feature_width(),
                modules.rho.in_width()
            ),
        ));
    }
    let p = g.constant(Tensor::from_vec(
        1,
        geom.global.len(),
        geom.global.iter().map(|&v| T::lit(v)).collect(),
    )?);
    let p_row = modules.embed_p.forward(g, p)?;

    let gamma = g.constant(geom.features.cast());
    let rho = modules.rho.forward(g, gamma)?;
    let c_geom = pool_reduce(g, rho, modules.pool)?;

    let mut rows = vec![p_row, c_geom];
    for h in input_to_geom_features(g, streams, geom, schedule, &modules.phi)? {
        rows.push(pool_reduce(g, h, modules.pool)?);
    }
    let tokens = g.concat_rows(&rows)?;
    Ok(ContextTokens {
        tokens,
        scales: schedule.len(),
    })
}
