//! Incompressible potential flow past spheres and ellipsoids.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, Point};

use super::{CaseSpec, ShapeKind};

/// Velocity and pressure coefficient at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub velocity: Point,
    pub cp: f64,
}

const INSIDE_TOL: f64 = 1e-9;

/// Exact inviscid solution for the body described by `spec`, with the body
/// centred at the origin and its axes aligned with the coordinate axes.
pub fn potential_flow_oracle(point: Point, spec: &CaseSpec) -> Result<FlowSample> {
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite point {point:?}")));
    }
    let velocity = match spec.kind {
        ShapeKind::Sphere => sphere_velocity(point, spec.axes[0], spec.speed, spec.onset)?,
        ShapeKind::Ellipsoid => {
            Ellipsoid::new(spec.axes)?.velocity(point, spec.speed, spec.onset)?
        }
    };
    let u2 = dot(velocity, velocity);
    Ok(FlowSample {
        velocity,
        cp: 1.0 - u2 / (spec.speed * spec.speed),
    })
}

/// `∇Φ` for `Φ = U (e·x)(1 + a³ / (2 r³))`.
pub fn sphere_velocity(x: Point, a: f64, speed: f64, onset: Point) -> Result<Point> {
    let r = norm(x);
    if r < a * (1.0 - INSIDE_TOL) {
        return Err(Error::Domain(format!(
            "point at r = {r} lies inside sphere of radius {a}"
        )));
    }
    let a3 = a * a * a;
    let r3 = r * r * r;
    let ex = dot(onset, x);
    let c0 = 1.0 + a3 / (2.0 * r3);
    let c1 = 1.5 * a3 / (r3 * r * r) * ex;
    Ok([
        speed * (onset[0] * c0 - c1 * x[0]),
        speed * (onset[1] * c0 - c1 * x[1]),
        speed * (onset[2] * c0 - c1 * x[2]),
    ])
}

/// Semi-axes with the closed-form coefficients of the exterior solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    axes: [f64; 3],
    /// `abc / (2 − α_i)` with `α_i = abc · I_i(0)`.
    coeff: [f64; 3],
}

impl Ellipsoid {
    pub fn new(axes: [f64; 3]) -> Result<Self> {
        if axes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Spec(format!("semi-axes must be positive: {axes:?}")));
        }
        let abc = axes[0] * axes[1] * axes[2];
        let i0 = depolarization_integrals(axes, 0.0);
        let coeff = [0, 1, 2].map(|i| abc / (2.0 - abc * i0[i]));
        Ok(Self { axes, coeff })
    }

    pub fn axes(&self) -> [f64; 3] {
        self.axes
    }

    /// `Σ x_i² / a_i²`; one on the surface.
    pub fn level(&self, x: Point) -> f64 {
        (0..3)
            .map(|i| x[i] * x[i] / (self.axes[i] * self.axes[i]))
            .sum()
    }

    /// Ellipsoidal coordinate `λ ≥ 0` with `Σ x_i² / (a_i² + λ) = 1`.
    pub fn lambda(&self, x: Point) -> f64 {
        let f = |l: f64| -> f64 {
            (0..3)
                .map(|i| x[i] * x[i] / (self.axes[i] * self.axes[i] + l))
                .sum::<f64>()
                - 1.0
        };
        if f(0.0) <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, dot(x, x));
        let mut l = 0.5 * hi;
        for _ in 0..200 {
            let fl = f(l);
            if fl > 0.0 {
                lo = l;
            } else {
                hi = l;
            }
            let df: f64 = -(0..3)
                .map(|i| {
                    let d = self.axes[i] * self.axes[i] + l;
                    x[i] * x[i] / (d * d)
                })
                .sum::<f64>();
            let next = l - fl / df;
            l = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 1e-15 * hi.max(1.0) || fl == 0.0 {
                break;
            }
        }
        l
    }

    /// `Φ = U Σ_i e_i x_i (1 + C_i I_i(λ))`.
    pub fn potential(&self, x: Point, speed: f64, onset: Point) -> f64 {
        let ints = depolarization_integrals(self.axes, self.lambda(x));
        (0..3)
            .map(|i| speed * onset[i] * x[i] * (1.0 + self.coeff[i] * ints[i]))
            .sum()
    }

    pub fn velocity(&self, x: Point, speed: f64, onset: Point) -> Result<Point> {
        if self.level(x) < 1.0 - INSIDE_TOL {
            return Err(Error::Domain(format!(
                "point {x:?} lies inside the ellipsoid {:?}",
                self.axes
            )));
        }
        let a2 = self.axes.map(|a| a * a);
        let lam = self.lambda(x);
        let ints = depolarization_integrals(self.axes, lam);
        let delta = ((a2[0] + lam) * (a2[1] + lam) * (a2[2] + lam)).sqrt();
        let denom: f64 = (0..3)
            .map(|k| x[k] * x[k] / ((a2[k] + lam) * (a2[k] + lam)))
            .sum();
        let grad_lam: Point = if denom > 0.0 {
            [0, 1, 2].map(|j| 2.0 * x[j] / (a2[j] + lam) / denom)
        } else {
            [0.0; 3]
        };
        let mut u = [0.0; 3];
        for i in 0..3 {
            if onset[i] == 0.0 {
                continue;
            }
            let di = -1.0 / ((a2[i] + lam) * delta);
            let s = speed * onset[i];
            for (j, uj) in u.iter_mut().enumerate() {
                let diag = if i == j {
                    1.0 + self.coeff[i] * ints[i]
                } else {
                    0.0
                };
                *uj += s * (diag + x[i] * self.coeff[i] * di * grad_lam[j]);
            }
        }
        Ok(u)
    }
}

/// `I_i(λ) = ∫_λ^∞ ds / ((a_i² + s) Δ(s))`, `Δ(s) = √Π(a_k² + s)`.
///
/// Evaluated with Gauss-Legendre after substituting
/// `v = √((A + λ) / (A + s))`, which turns the tail into a smooth integrand
/// on `[0, 1]`.
pub fn depolarization_integrals(axes: [f64; 3], lambda: f64) -> [f64; 3] {
    let a2 = axes.map(|a| a * a);
    let big = a2.iter().cloned().fold(f64::MIN, f64::max);
    let base = big + lambda;
    let (nodes, weights) = gauss_legendre_unit();
    let mut out = [0.0; 3];
    for (&v, &w) in nodes.iter().zip(weights) {
        if v == 0.0 {
            continue;
        }
        let s = base / (v * v) - big;
        let jac = 2.0 * base / (v * v * v);
        let prod = (a2[0] + s) * (a2[1] + s) * (a2[2] + s);
        let delta = prod.sqrt();
        for i in 0..3 {
            out[i] += w * jac / ((a2[i] + s) * delta);
        }
    }
    out
}

const GL_POINTS: usize = 64;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit() -> (&'static [f64], &'static [f64]) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut xs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            xs.push(0.5 * (1.0 - z));
            ws.push(1.0 / ((1.0 - z * z) * dp * dp));
        }
        (xs, ws)
    });
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let m7: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(7)).sum();
        assert!((m7 - 0.125).abs() < 1e-14);
    }

    #[test]
    fn sphere_integrals_match_closed_form() {
        let a: f64 = 1.3;
        for lam in [0.0, 0.5, 4.0, 100.0] {
            let i = depolarization_integrals([a, a, a], lam);
            let exact = (2.0 / 3.0) * (a * a + lam).powf(-1.5);
            for v in i {
                assert!((v - exact).abs() < 1e-12 * exact, "{v} vs {exact}");
            }
        }
    }

    #[test]
    fn integrals_satisfy_sum_rule() {
        // Σ_i I_i(0) = 2 / abc
        let axes = [1.4, 0.7, 0.9];
        let i = depolarization_integrals(axes, 0.0);
        let abc = axes[0] * axes[1] * axes[2];
        assert!((i.iter().sum::<f64>() - 2.0 / abc).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_code_reduces_to_sphere() {
        let e = Ellipsoid::new([1.0; 3]).unwrap();
        let onset = [0.6, 0.0, 0.8];
        for x in [[1.5, 0.2, -0.3], [0.0, 0.0, 1.0], [3.0, -2.0, 0.5]] {
            let a = e.velocity(x, 1.7, onset).unwrap();
            let b = sphere_velocity(x, 1.0, 1.7, onset).unwrap();
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn ellipsoid_lambda_solves_level_equation() {
        let e = Ellipsoid::new([1.5, 0.8, 0.6]).unwrap();
        let x = [2.0, -1.0, 0.4];
        let l = e.lambda(x);
        let a = e.axes();
        let f: f64 = (0..3).map(|i| x[i] * x[i] / (a[i] * a[i] + l)).sum();
        assert!((f - 1.0).abs() < 1e-13);
        assert_eq!(e.lambda([1.5, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn inside_points_are_rejected() {
        assert!(matches!(
            sphere_velocity([0.1, 0.0, 0.0], 1.0, 1.0, [1.0, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        let e = Ellipsoid::new([1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            e.velocity([0.0, 1.0, 1.0], 1.0, [1.0, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }
}
