//! Field errors, surface force integration, R² and design-trend ranking.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{norm, Point};
use crate::numerics::exact::ExactSum;
use crate::numerics::Tensor;

fn check_pairs(op: &'static str, truth: &[Tensor<f64>], pred: &[Tensor<f64>]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::EmptyInput(format!("{op} needs at least one case")));
    }
    if truth.len() != pred.len() {
        return Err(Error::dim(
            op,
            format!("{} true cases vs {} predicted", truth.len(), pred.len()),
        ));
    }
    for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
        if t.shape() != p.shape() {
            return Err(Error::dim(
                op,
                format!("case {i}: {:?} vs {:?}", t.shape(), p.shape()),
            ));
        }
    }
    Ok(())
}

fn l1(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v.abs()).sum()
}

fn l1_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// `(1/N) Σ_j ‖u_j − ũ_j‖₁`, the norm taken entrywise over one case.
pub fn mae(truth: &[Tensor<f64>], pred: &[Tensor<f64>]) -> Result<f64> {
    check_pairs("mae", truth, pred)?;
    let total: f64 = truth.iter().zip(pred).map(|(t, p)| l1_diff(t, p)).sum();
    Ok(total / truth.len() as f64)
}

/// `Σ_j ‖u_j − ũ_j‖₁ / Σ_j ‖u_j‖₁`.
pub fn relative_l1(truth: &[Tensor<f64>], pred: &[Tensor<f64>]) -> Result<f64> {
    check_pairs("relative_l1", truth, pred)?;
    let den: f64 = truth.iter().map(l1).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative L1 of an all-zero ground truth".into(),
        ));
    }
    let num: f64 = truth.iter().zip(pred).map(|(t, p)| l1_diff(t, p)).sum();
    Ok(num / den)
}

/// `Σ Cp² dS`.
pub fn cp_square_integral(cp: &[f64], area: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for (c, a) in cp.iter().zip(area) {
        acc.add(c * c * a);
    }
    acc.value()
}

const UNIT_TOL: f64 = 1e-6;

/// Per-point surface data for force integration.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceQuadrature {
    normals: Vec<Point>,
    area: Vec<f64>,
    pressure: Vec<f64>,
    p_inf: f64,
    shear: Vec<Point>,
}

impl SurfaceQuadrature {
    pub fn new(
        normals: Vec<Point>,
        area: Vec<f64>,
        pressure: Vec<f64>,
        p_inf: f64,
        shear: Vec<Point>,
    ) -> Result<Self> {
        let n = normals.len();
        if area.len() != n || pressure.len() != n || shear.len() != n {
            return Err(Error::Quadrature(format!(
                "column lengths differ: normals {n}, area {}, pressure {}, shear {}",
                area.len(),
                pressure.len(),
                shear.len()
            )));
        }
        if let Some((i, nv)) = normals
            .iter()
            .enumerate()
            .find(|(_, v)| (norm(**v) - 1.0).abs() > UNIT_TOL)
        {
            return Err(Error::Quadrature(format!(
                "normal {i} has length {}",
                norm(*nv)
            )));
        }
        if let Some((i, a)) = area
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0) || !a.is_finite())
        {
            return Err(Error::Quadrature(format!("area weight {i} is {a}")));
        }
        Ok(Self {
            normals,
            area,
            pressure,
            p_inf,
            shear,
        })
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.area.iter().sum()
    }
}

/// `F = Σ (−(p_s − p_∞) n̂ + τ_w) dS`, each component summed exactly.
pub fn surface_force(q: &SurfaceQuadrature) -> Point {
    let mut acc = [ExactSum::new(), ExactSum::new(), ExactSum::new()];
    for i in 0..q.len() {
        let dp = q.pressure[i] - q.p_inf;
        for (k, a) in acc.iter_mut().enumerate() {
            a.add(-dp * q.normals[i][k] * q.area[i]);
            a.add(q.shear[i][k] * q.area[i]);
        }
    }
    [acc[0].value(), acc[1].value(), acc[2].value()]
}

/// Drag and lift from a force vector; `reference` divides both when given.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceCoefficients {
    pub drag: f64,
    pub lift: f64,
}

impl ForceCoefficients {
    pub fn from_force(f: Point, reference: Option<f64>) -> Self {
        let s = reference.unwrap_or(1.0);
        Self {
            drag: f[0] / s,
            lift: f[2] / s,
        }
    }
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::dim(
            "r_squared",
            format!("{} vs {} values", truth.len(), pred.len()),
        ));
    }
    if truth.len() < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two cases".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R² of a constant ground truth".into(),
        ));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Kendall's tau-b; `None` when either ranking is fully tied.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = (a[i] - a[j]).partial_cmp(&0.0)? as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0)? as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_a) as f64;
    let n2 = (concordant + discordant + ties_b) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendRow {
    pub id: String,
    pub truth: f64,
    pub pred: f64,
}

/// Cases ordered by ascending truth with the rank agreement of the
/// predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendTable {
    pub rows: Vec<TrendRow>,
    pub tau: Option<f64>,
}

pub fn design_trend_table(mut rows: Vec<TrendRow>) -> Result<TrendTable> {
    if rows.is_empty() {
        return Err(Error::EmptyInput(
            "trend table needs at least one case".into(),
        ));
    }
    rows.sort_by(|x, y| x.truth.total_cmp(&y.truth).then_with(|| x.id.cmp(&y.id)));
    let t: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let tau = kendall_tau(&t, &p);
    Ok(TrendTable { rows, tau })
}

impl TrendTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let tau = fmt_opt(self.tau);
        record(
            &mut w,
            path,
            ["rank", "id", "truth", "pred", "kendall_tau"]
                .map(String::from)
                .to_vec(),
        )?;
        for (i, r) in self.rows.iter().enumerate() {
            record(
                &mut w,
                path,
                vec![
                    i.to_string(),
                    r.id.clone(),
                    r.truth.to_string(),
                    r.pred.to_string(),
                    tau.clone(),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Error of one output field on one case. `relative_l1` is `None` when the
/// truth is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub name: String,
    pub relative_l1: Option<f64>,
    pub mae: f64,
}

impl FieldError {
    pub fn between(name: &str, truth: &Tensor<f64>, pred: &Tensor<f64>) -> Result<Self> {
        let t = std::slice::from_ref(truth);
        let p = std::slice::from_ref(pred);
        Ok(Self {
            name: name.into(),
            relative_l1: optional(relative_l1(t, p))?,
            mae: mae(t, p)?,
        })
    }
}

/// Turns an undefined metric into `None`, passing other errors through.
pub fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseMetrics {
    pub id: String,
    pub fields: Vec<FieldError>,
    pub force_true: Point,
    pub force_pred: Point,
    pub j_true: f64,
    pub j_pred: f64,
}

/// Test-set summary: one row per case plus aggregate errors and R².
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<CaseMetrics>,
    /// Aggregate errors over all cases, in the same order as each case's
    /// `fields`.
    pub fields: Vec<FieldError>,
    /// R² of drag, lift and the design quantity.
    pub r2: Vec<(String, Option<f64>)>,
    pub trend: TrendTable,
}

impl MetricReport {
    /// Aggregates per-case fields; `truth[f][c]` is field `f` of case `c`.
    pub fn build(
        cases: Vec<CaseMetrics>,
        names: &[String],
        truth: &[Vec<Tensor<f64>>],
        pred: &[Vec<Tensor<f64>>],
    ) -> Result<Self> {
        let mut fields = Vec::with_capacity(names.len());
        for ((name, t), p) in names.iter().zip(truth).zip(pred) {
            fields.push(FieldError {
                name: name.clone(),
                relative_l1: optional(relative_l1(t, p))?,
                mae: mae(t, p)?,
            });
        }
        let col = |f: &dyn Fn(&CaseMetrics) -> f64| cases.iter().map(f).collect::<Vec<_>>();
        let r2 = vec![
            (
                "drag".to_string(),
                optional(r_squared(
                    &col(&|c| c.force_true[0]),
                    &col(&|c| c.force_pred[0]),
                ))?,
            ),
            (
                "lift".to_string(),
                optional(r_squared(
                    &col(&|c| c.force_true[2]),
                    &col(&|c| c.force_pred[2]),
                ))?,
            ),
            (
                "J".to_string(),
                optional(r_squared(&col(&|c| c.j_true), &col(&|c| c.j_pred)))?,
            ),
        ];
        let trend = design_trend_table(
            cases
                .iter()
                .map(|c| TrendRow {
                    id: c.id.clone(),
                    truth: c.j_true,
                    pred: c.j_pred,
                })
                .collect(),
        )?;
        Ok(Self {
            cases,
            fields,
            r2,
            trend,
        })
    }

    pub fn field(&self, name: &str) -> Option<&FieldError> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn r2(&self, name: &str) -> Option<f64> {
        self.r2
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
    }

    /// Columns: `id`, `<field>_rel_l1` and `<field>_mae` per field,
    /// `fx_true … fz_pred`, `J_true`, `J_pred`, then one `r2_<name>` per
    /// quantity, filled only on the final `summary` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let mut header = vec!["id".to_string()];
        for f in &self.fields {
            header.push(format!("{}_rel_l1", f.name));
            header.push(format!("{}_mae", f.name));
        }
        for side in ["true", "pred"] {
            for axis in ["fx", "fy", "fz"] {
                header.push(format!("{axis}_{side}"));
            }
        }
        header.push("J_true".into());
        header.push("J_pred".into());
        for (n, _) in &self.r2 {
            header.push(format!("r2_{n}"));
        }
        record(&mut w, path, header)?;
        for c in &self.cases {
            let mut row = vec![c.id.clone()];
            for f in &c.fields {
                row.push(fmt_opt(f.relative_l1));
                row.push(f.mae.to_string());
            }
            row.extend(
                c.force_true
                    .iter()
                    .chain(&c.force_pred)
                    .map(|v| v.to_string()),
            );
            row.push(c.j_true.to_string());
            row.push(c.j_pred.to_string());
            row.extend(self.r2.iter().map(|_| String::new()));
            record(&mut w, path, row)?;
        }
        let mut row = vec!["summary".to_string()];
        for f in &self.fields {
            row.push(fmt_opt(f.relative_l1));
            row.push(f.mae.to_string());
        }
        row.extend(std::iter::repeat(String::new()).take(8));
        row.extend(self.r2.iter().map(|(_, v)| fmt_opt(*v)));
        record(&mut w, path, row)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Formats an optional metric, writing `undefined` for `None`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn record(w: &mut csv::Writer<std::fs::File>, path: &Path, row: Vec<String>) -> Result<()> {
    w.write_record(&row)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
