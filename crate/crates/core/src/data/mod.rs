//! Synthetic potential-flow cases, splits, point-table I/O and
//! normalisation.

pub mod flow;
mod io;
mod normalize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::LocalStream;
use crate::error::{Error, Result};
use crate::geometry::{norm, Point, PointSet};
use crate::numerics::Tensor;

pub use flow::{potential_flow_oracle, FlowSample};
pub use io::{
    load_csv_pointcloud, load_dataset, read_manifest, save_dataset, write_csv, write_manifest,
    ManifestEntry,
};
pub use normalize::{Normalizer, Stats, StreamStats};

pub const SURFACE: &str = "surface";
pub const VOLUME: &str = "volume";
pub const SURFACE_COLUMNS: [&str; 11] = [
    "x", "y", "z", "nx", "ny", "nz", "area", "cp", "tau_x", "tau_y", "tau_z",
];
pub const VOLUME_COLUMNS: [&str; 7] = ["x", "y", "z", "cp", "u", "v", "w"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Ellipsoid,
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Ellipsoid => "ellipsoid",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "ellipsoid" => Ok(ShapeKind::Ellipsoid),
            other => Err(Error::Spec(format!("unknown shape kind `{other}`"))),
        }
    }
}

/// Parameters of one generated case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub id: String,
    pub kind: ShapeKind,
    /// Semi-axes; all equal for a sphere.
    pub axes: [f64; 3],
    pub speed: f64,
    /// Unit free-stream direction.
    pub onset: Point,
    pub surface_points: usize,
    pub volume_points: usize,
    /// Outer radius of the sampled fluid region.
    pub r_outer: f64,
    pub seed: u64,
}

impl CaseSpec {
    pub fn sphere(id: impl Into<String>, radius: f64, speed: f64, seed: u64) -> Self {
        Self {
            id: id.into(),
            kind: ShapeKind::Sphere,
            axes: [radius; 3],
            speed,
            onset: [1.0, 0.0, 0.0],
            surface_points: 2000,
            volume_points: 4000,
            r_outer: 2.5 * radius,
            seed,
        }
    }

    pub fn max_axis(&self) -> f64 {
        self.axes.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(format!("case `{}`: {m}", self.id)));
        if self.axes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return fail(format!("semi-axes must be positive, got {:?}", self.axes));
        }
        if self.kind == ShapeKind::Sphere
            && !(self.axes[0] == self.axes[1] && self.axes[1] == self.axes[2])
        {
            return fail(format!("sphere with unequal axes {:?}", self.axes));
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return fail(format!("speed must be positive, got {}", self.speed));
        }
        if (norm(self.onset) - 1.0).abs() > 1e-9 {
            return fail(format!("onset {:?} is not a unit vector", self.onset));
        }
        if self.surface_points < 4 || self.volume_points < 4 {
            return fail("point counts must be >= 4".into());
        }
        if !(self.r_outer > self.max_axis()) || !self.r_outer.is_finite() {
            return fail(format!(
                "r_outer {} must exceed the body size {}",
                self.r_outer,
                self.max_axis()
            ));
        }
        Ok(())
    }

    /// Global parameter vector `[U, a_x, a_y, a_z]`.
    pub fn global(&self) -> Vec<f64> {
        vec![self.speed, self.axes[0], self.axes[1], self.axes[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// Named columns over a set of points. `x`, `y`, `z` are always present.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTable {
    columns: Vec<String>,
    data: Tensor<f64>,
}

impl PointTable {
    pub fn new(columns: Vec<String>, data: Tensor<f64>) -> Result<Self> {
        if columns.len() != data.cols() {
            return Err(Error::Data(format!(
                "{} column names for {} columns",
                columns.len(),
                data.cols()
            )));
        }
        for c in ["x", "y", "z"] {
            if !columns.iter().any(|n| n == c) {
                return Err(Error::Schema(c.into()));
            }
        }
        Ok(Self { columns, data })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn data(&self) -> &Tensor<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index_of(name)?;
        Ok((0..self.len()).map(|i| self.data.get(i, j)).collect())
    }

    /// `N × names.len()` tensor of the named columns.
    pub fn select(&self, names: &[String]) -> Result<Tensor<f64>> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.len() * idx.len());
        for i in 0..self.len() {
            let row = self.data.row(i);
            out.extend(idx.iter().map(|&j| row[j]));
        }
        Tensor::from_vec(self.len(), idx.len(), out)
    }

    pub fn positions(&self) -> Result<PointSet> {
        let (x, y, z) = (
            self.index_of("x")?,
            self.index_of("y")?,
            self.index_of("z")?,
        );
        PointSet::new(
            (0..self.len())
                .map(|i| {
                    let r = self.data.row(i);
                    [r[x], r[y], r[z]]
                })
                .collect(),
        )
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            data: self.data.select_rows(idx),
        }
    }

    /// Stream with the named feature columns, zero-padded to `width`.
    pub fn to_stream(&self, name: &str, features: &[String], width: usize) -> Result<LocalStream> {
        if features.len() > width {
            return Err(Error::dim(
                "to_stream",
                format!("{} feature columns exceed width {width}", features.len()),
            ));
        }
        let f = pad_cols(&self.select(features)?, width);
        LocalStream::new(name, self.positions()?, f)
    }
}

/// Column names feeding one model stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSchema {
    pub name: String,
    pub features: Vec<String>,
    pub outputs: Vec<String>,
}

impl StreamSchema {
    pub fn new(name: &str, features: &[&str], outputs: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            name: name.into(),
            features: own(features),
            outputs: own(outputs),
        }
    }

    pub fn surface() -> Self {
        Self::new(
            SURFACE,
            &["nx", "ny", "nz"],
            &["cp", "tau_x", "tau_y", "tau_z"],
        )
    }

    pub fn volume() -> Self {
        Self::new(VOLUME, &[], &["cp", "u", "v", "w"])
    }
}

/// Appends zero columns up to `width`.
pub fn pad_cols(t: &Tensor<f64>, width: usize) -> Tensor<f64> {
    if t.cols() == width {
        return t.clone();
    }
    let mut out = Tensor::zeros(t.rows(), width);
    for i in 0..t.rows() {
        out.row_mut(i)[..t.cols()].copy_from_slice(t.row(i));
    }
    out
}

/// One generated or loaded case.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub spec: CaseSpec,
    pub split: Split,
    pub global: Vec<f64>,
    pub streams: BTreeMap<String, PointTable>,
}

impl Case {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn stream(&self, name: &str) -> Result<&PointTable> {
        self.streams
            .get(name)
            .ok_or_else(|| Error::Data(format!("case `{}` has no stream `{name}`", self.spec.id)))
    }

    /// `J = Σ Cp² dS` over the surface.
    pub fn design_quantity(&self) -> Result<f64> {
        let s = self.stream(SURFACE)?;
        let cp = s.column("cp")?;
        let area = s.column("area")?;
        Ok(crate::metrics::cp_square_integral(&cp, &area))
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Near-uniform unit vectors. For even `n` the set is closed under negation,
/// so the summed normals of a generated surface cancel exactly.
pub fn fibonacci_sphere(n: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(n);
    if n % 2 == 0 {
        let h = n / 2;
        for k in 0..h {
            let z = (k as f64 + 0.5) / h as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = k as f64 * GOLDEN_ANGLE;
            let p = [r * phi.cos(), r * phi.sin(), z];
            out.push(p);
            out.push([-p[0], -p[1], -p[2]]);
        }
    } else {
        for k in 0..n {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = k as f64 * GOLDEN_ANGLE;
            out.push([r * phi.cos(), r * phi.sin(), z]);
        }
    }
    out
}

fn random_direction<R: Rng>(rng: &mut R) -> Point {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Surface and volume point tables with oracle targets.
pub fn generate_case(spec: &CaseSpec) -> Result<Case> {
    spec.validate()?;
    let [a, b, c] = spec.axes;
    let abc = a * b * c;
    let n = spec.surface_points;
    let omega = 4.0 * std::f64::consts::PI / n as f64;

    let mut surf = Vec::with_capacity(n * SURFACE_COLUMNS.len());
    for u in fibonacci_sphere(n) {
        let x = [a * u[0], b * u[1], c * u[2]];
        let m = [u[0] / a, u[1] / b, u[2] / c];
        let mn = norm(m);
        let normal = [m[0] / mn, m[1] / mn, m[2] / mn];
        let area = abc * mn * omega;
        let flow = potential_flow_oracle(x, spec)?;
        surf.extend_from_slice(&[
            x[0], x[1], x[2], normal[0], normal[1], normal[2], area, flow.cp, 0.0, 0.0, 0.0,
        ]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r_min = a.min(b).min(c);
    let (lo3, hi3) = (r_min.powi(3), spec.r_outer.powi(3));
    let mut vol = Vec::with_capacity(spec.volume_points * VOLUME_COLUMNS.len());
    let mut accepted = 0;
    let mut attempts = 0usize;
    while accepted < spec.volume_points {
        attempts += 1;
        if attempts > 1000 * spec.volume_points {
            return Err(Error::Spec(format!(
                "case `{}`: volume rejection sampling stalled",
                spec.id
            )));
        }
        let r = (lo3 + rng.gen::<f64>() * (hi3 - lo3)).cbrt();
        let d = random_direction(&mut rng);
        let x = [r * d[0], r * d[1], r * d[2]];
        if x[0] * x[0] / (a * a) + x[1] * x[1] / (b * b) + x[2] * x[2] / (c * c) <= 1.0 {
            continue;
        }
        let flow = potential_flow_oracle(x, spec)?;
        let v = flow.velocity;
        vol.extend_from_slice(&[x[0], x[1], x[2], flow.cp, v[0], v[1], v[2]]);
        accepted += 1;
    }

    let names = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut streams = BTreeMap::new();
    streams.insert(
        SURFACE.to_string(),
        PointTable::new(
            names(&SURFACE_COLUMNS),
            Tensor::from_vec(n, SURFACE_COLUMNS.len(), surf)?,
        )?,
    );
    streams.insert(
        VOLUME.to_string(),
        PointTable::new(
            names(&VOLUME_COLUMNS),
            Tensor::from_vec(spec.volume_points, VOLUME_COLUMNS.len(), vol)?,
        )?,
    );
    Ok(Case {
        spec: spec.clone(),
        split: Split::Train,
        global: spec.global(),
        streams,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Random,
    /// Cases with the most extreme design quantity go to test.
    Extreme,
}

fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let train = (fractions[0] * n as f64).round() as usize;
    let val = (fractions[1] * n as f64).round() as usize;
    if train == 0 || val == 0 || train + val >= n {
        return Err(Error::Data(format!(
            "{n} cases are too few for fractions {fractions:?}"
        )));
    }
    Ok([train, val, n - train - val])
}

/// Seeded random partition into train / val / test.
pub fn split_dataset(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let [train, val, _] = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < train {
            out[i] = Split::Train;
        } else if rank < train + val {
            out[i] = Split::Val;
        }
    }
    Ok(out)
}

/// Test set made of the highest and lowest `values`; the rest is split at
/// random between train and val.
pub fn extreme_holdout(values: &[f64], fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let n = values.len();
    let [train, _, test] = split_sizes(n, fractions)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "extreme holdout needs finite statistics".into(),
        ));
    }
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let low = test / 2;
    let high = test - low;
    let mut out = vec![Split::Train; n];
    for &i in by_value[..low].iter().chain(&by_value[n - high..]) {
        out[i] = Split::Test;
    }
    let mut rest: Vec<usize> = by_value[low..n - high].to_vec();
    rest.sort_unstable();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &rest[train..] {
        out[i] = Split::Val;
    }
    Ok(out)
}

/// Recipe for a randomly drawn family of cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_cases: usize,
    pub surface_points: usize,
    pub volume_points: usize,
    pub sphere_fraction: f64,
    pub radius_range: [f64; 2],
    pub axis_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub onset: Point,
    /// `r_outer` as a multiple of the largest semi-axis.
    pub r_outer_factor: f64,
    pub split: [f64; 3],
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_cases: 64,
            surface_points: 2000,
            volume_points: 4000,
            sphere_fraction: 0.5,
            radius_range: [0.75, 1.25],
            axis_range: [0.6, 1.4],
            speed_range: [0.5, 1.5],
            onset: [1.0, 0.0, 0.0],
            r_outer_factor: 2.5,
            split: [0.8, 0.1, 0.1],
            split_mode: SplitMode::Random,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !range_ok(self.radius_range) || !range_ok(self.axis_range) || !range_ok(self.speed_range)
        {
            return Err(Error::Config(
                "data ranges must be positive and ordered".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sphere_fraction) {
            return Err(Error::Config(
                "data.sphere_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.r_outer_factor > 1.0) {
            return Err(Error::Config("data.r_outer_factor must exceed 1".into()));
        }
        split_sizes(self.n_cases, self.split).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn case_specs(&self) -> Result<Vec<CaseSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let onset_norm = norm(self.onset);
        if !(onset_norm > 0.0) {
            return Err(Error::Config("data.onset must be non-zero".into()));
        }
        let onset = self.onset.map(|v| v / onset_norm);
        let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.gen_range(r[0]..r[1])
            }
        };
        Ok((0..self.n_cases)
            .map(|i| {
                let sphere = rng.gen::<f64>() < self.sphere_fraction;
                let (kind, axes) = if sphere {
                    let a = draw(&mut rng, self.radius_range);
                    (ShapeKind::Sphere, [a; 3])
                } else {
                    let ax = [0, 1, 2].map(|_| draw(&mut rng, self.axis_range));
                    (ShapeKind::Ellipsoid, ax)
                };
                let speed = draw(&mut rng, self.speed_range);
                let max_axis = axes.iter().cloned().fold(f64::MIN, f64::max);
                CaseSpec {
                    id: format!("case{i:04}"),
                    kind,
                    axes,
                    speed,
                    onset,
                    surface_points: self.surface_points,
                    volume_points: self.volume_points,
                    r_outer: self.r_outer_factor * max_axis,
                    seed: rng.gen(),
                }
            })
            .collect())
    }

    /// Generated cases with split tags applied.
    pub fn generate(&self) -> Result<Vec<Case>> {
        let mut cases = self
            .case_specs()?
            .iter()
            .map(generate_case)
            .collect::<Result<Vec<_>>>()?;
        let splits = match self.split_mode {
            SplitMode::Random => split_dataset(cases.len(), self.split, self.seed)?,
            SplitMode::Extreme => {
                let j = cases
                    .iter()
                    .map(Case::design_quantity)
                    .collect::<Result<Vec<_>>>()?;
                extreme_holdout(&j, self.split, self.seed)?
            }
        };
        for (c, s) in cases.iter_mut().zip(splits) {
            c.split = s;
        }
        Ok(cases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_surface_area_and_normals() {
        let mut spec = CaseSpec::sphere("s", 1.0, 1.0, 3);
        spec.volume_points = 10;
        let case = generate_case(&spec).unwrap();
        let s = case.stream(SURFACE).unwrap();
        let total: f64 = s.column("area").unwrap().iter().sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 0.005 * 4.0 * std::f64::consts::PI);
        let n = s.select(&["nx".into(), "ny".into(), "nz".into()]).unwrap();
        for i in 0..n.rows() {
            assert!((norm([n.get(i, 0), n.get(i, 1), n.get(i, 2)]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn volume_points_lie_outside() {
        let mut spec = CaseSpec::sphere("s", 0.8, 1.3, 4);
        spec.kind = ShapeKind::Ellipsoid;
        spec.axes = [1.2, 0.8, 0.5];
        spec.r_outer = 3.0;
        spec.surface_points = 100;
        spec.volume_points = 500;
        let case = generate_case(&spec).unwrap();
        let v = case.stream(VOLUME).unwrap().positions().unwrap();
        let e = flow::Ellipsoid::new(spec.axes).unwrap();
        assert!(v
            .positions()
            .iter()
            .all(|&p| e.level(p) > 1.0 && norm(p) <= 3.0 + 1e-12));
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = CaseSpec::sphere("s", 1.0, 1.0, 9);
        spec.surface_points = 50;
        spec.volume_points = 50;
        assert_eq!(generate_case(&spec).unwrap(), generate_case(&spec).unwrap());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = CaseSpec::sphere("s", 1.0, 1.0, 9);
        spec.r_outer = 0.5;
        assert!(matches!(generate_case(&spec), Err(Error::Spec(_))));
        let mut spec = CaseSpec::sphere("s", 1.0, 1.0, 9);
        spec.surface_points = 3;
        assert!(matches!(generate_case(&spec), Err(Error::Spec(_))));
        let mut spec = CaseSpec::sphere("s", 1.0, -1.0, 9);
        spec.speed = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split_dataset(20, [0.8, 0.1, 0.1], 1).unwrap();
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (16, 2, 2)
        );
        assert_eq!(s, split_dataset(20, [0.8, 0.1, 0.1], 1).unwrap());
        assert!(matches!(
            split_dataset(3, [0.8, 0.1, 0.1], 1),
            Err(Error::Data(_))
        ));
        assert!(split_dataset(20, [0.8, 0.1, 0.2], 1).is_err());
    }

    #[test]
    fn extreme_holdout_takes_min_and_max() {
        let values: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64).collect();
        let s = extreme_holdout(&values, [0.8, 0.1, 0.1], 3).unwrap();
        let imax = values.iter().position(|&v| v == 19.0).unwrap();
        let imin = values.iter().position(|&v| v == 0.0).unwrap();
        assert_eq!(s[imax], Split::Test);
        assert_eq!(s[imin], Split::Test);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 2);
    }

    #[test]
    fn dataset_config_draws_varied_cases() {
        let cfg = DatasetConfig {
            n_cases: 10,
            surface_points: 20,
            volume_points: 20,
            ..Default::default()
        };
        let specs = cfg.case_specs().unwrap();
        assert_eq!(specs.len(), 10);
        assert!(specs.iter().any(|s| s.kind == ShapeKind::Sphere));
        assert!(specs.iter().any(|s| s.kind == ShapeKind::Ellipsoid));
        for s in &specs {
            s.validate().unwrap();
        }
    }

    #[test]
    fn table_schema_errors() {
        let t = Tensor::zeros(2, 2);
        assert!(matches!(
            PointTable::new(vec!["x".into(), "y".into()], t),
            Err(Error::Schema(c)) if c == "z"
        ));
    }
}
