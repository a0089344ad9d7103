//! Locally periodic coefficients `A(x, y)`, 1-periodic in every component of `y`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Symmetric d×d matrix stored as 2×2; only the leading `dim` block is used.
pub type Mat = [[f64; 2]; 2];

type MatrixFn = dyn Fn(&[f64], &[f64]) -> Mat + Send + Sync;

#[derive(Clone)]
enum Profile {
    Constant(f64),
    /// `1.1 + (sin(2π x + phase_x) + sin(2π y + phase_y)) / 2`, optionally frozen in `x`.
    Sine1d {
        phase_x: f64,
        phase_y: f64,
        frozen_x: Option<f64>,
    },
    /// `(1.5 + sin 2π y1)(1.5 + sin 2π y2)`
    Product2d,
    /// `1.5 + sin 2π y1 + sin(2π x2) cos(2π y1)`
    Modulated2d,
    Custom(Arc<MatrixFn>),
}

/// Catalog names accepted by [`CoefficientField::catalog`].
pub const CATALOG: &[&str] = &[
    "constant",
    "constant-1d",
    "constant-2d",
    "periodic-1d",
    "locally-periodic-1d",
    "locally-periodic-1d-zero-phase",
    "periodic-2d",
    "locally-periodic-2d",
];

#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    label: String,
    c1: f64,
    c2: f64,
    profile: Profile,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish()
    }
}

fn scalar(a: f64) -> Mat {
    [[a, 0.0], [0.0, a]]
}

/// k-th derivative of `sin(2π x + phase)` with respect to `x`.
fn sin_derivative(k: usize, x: f64, phase: f64) -> f64 {
    (2.0 * PI).powi(k as i32) * (2.0 * PI * x + phase + k as f64 * PI / 2.0).sin()
}

impl CoefficientField {
    /// `A ≡ a I` in `dim` dimensions.
    pub fn constant(dim: usize, a: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!(
                "constant coefficient must be positive, got {a}"
            )));
        }
        Ok(CoefficientField {
            dim,
            label: format!("constant-{dim}d"),
            c1: a,
            c2: a,
            profile: Profile::Constant(a),
        })
    }

    /// Looks up a built-in coefficient by name. `constant` is the 1D unit
    /// coefficient; `constant-1d:2.5` style suffixes set the value.
    pub fn catalog(name: &str) -> Result<Self> {
        let (base, value) = match name.split_once(':') {
            Some((b, v)) => {
                let a: f64 = v
                    .parse()
                    .map_err(|_| Error::UnknownCoefficient(name.to_string()))?;
                (b, Some(a))
            }
            None => (name, None),
        };
        let field = match base {
            "constant" | "constant-1d" => CoefficientField::constant(1, value.unwrap_or(1.0))?,
            "constant-2d" => CoefficientField::constant(2, value.unwrap_or(1.0))?,
            _ if value.is_some() => return Err(Error::UnknownCoefficient(name.to_string())),
            "periodic-1d" => CoefficientField {
                dim: 1,
                label: base.into(),
                c1: 0.1,
                c2: 2.1,
                profile: Profile::Sine1d {
                    phase_x: 0.1,
                    phase_y: 2.0,
                    frozen_x: Some(0.0),
                },
            },
            "locally-periodic-1d" => CoefficientField {
                dim: 1,
                label: base.into(),
                c1: 0.1,
                c2: 2.1,
                profile: Profile::Sine1d {
                    phase_x: 0.1,
                    phase_y: 2.0,
                    frozen_x: None,
                },
            },
            "locally-periodic-1d-zero-phase" => CoefficientField {
                dim: 1,
                label: base.into(),
                c1: 0.1,
                c2: 2.1,
                profile: Profile::Sine1d {
                    phase_x: 0.0,
                    phase_y: 0.0,
                    frozen_x: None,
                },
            },
            "periodic-2d" => CoefficientField {
                dim: 2,
                label: base.into(),
                c1: 0.25,
                c2: 6.25,
                profile: Profile::Product2d,
            },
            "locally-periodic-2d" => CoefficientField {
                dim: 2,
                label: base.into(),
                c1: 1.5 - 2f64.sqrt(),
                c2: 1.5 + 2f64.sqrt(),
                profile: Profile::Modulated2d,
            },
            _ => return Err(Error::UnknownCoefficient(name.to_string())),
        };
        Ok(field)
    }

    /// A user-supplied coefficient. Slow derivatives fall back to finite
    /// differences.
    pub fn custom<F>(dim: usize, label: &str, c1: f64, c2: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> Mat + Send + Sync + 'static,
    {
        if !(dim == 1 || dim == 2) {
            return Err(invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(c1 > 0.0 && c2 >= c1) {
            return Err(invalid(format!("need 0 < c1 <= c2, got c1={c1}, c2={c2}")));
        }
        Ok(CoefficientField {
            dim,
            label: label.to_string(),
            c1,
            c2,
            profile: Profile::Custom(Arc::new(f)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// True when `A` does not depend on the slow variable.
    pub fn is_x_independent(&self) -> bool {
        match self.profile {
            Profile::Constant(_) | Profile::Product2d => true,
            Profile::Sine1d { frozen_x, .. } => frozen_x.is_some(),
            Profile::Modulated2d | Profile::Custom(_) => false,
        }
    }

    /// True when every value of `A` is a multiple of the identity.
    pub fn is_diagonal(&self) -> bool {
        !matches!(self.profile, Profile::Custom(_))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Mat {
        match &self.profile {
            Profile::Constant(a) => scalar(*a),
            Profile::Sine1d {
                phase_x,
                phase_y,
                frozen_x,
            } => {
                let xs = frozen_x.unwrap_or(x[0]);
                let slow = match frozen_x {
                    // written as printed: sin(r0) with r0 = 0.1
                    Some(_) => phase_x.sin(),
                    None => (2.0 * PI * xs + phase_x).sin(),
                };
                scalar(1.1 + 0.5 * (slow + (2.0 * PI * y[0] + phase_y).sin()))
            }
            Profile::Product2d => {
                scalar((1.5 + (2.0 * PI * y[0]).sin()) * (1.5 + (2.0 * PI * y[1]).sin()))
            }
            Profile::Modulated2d => scalar(
                1.5 + (2.0 * PI * y[0]).sin() + (2.0 * PI * x[1]).sin() * (2.0 * PI * y[0]).cos(),
            ),
            Profile::Custom(f) => f(x, y),
        }
    }

    /// Scalar value of a catalog coefficient (the (0,0) entry in general).
    pub fn eval_scalar(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval(x, y)[0][0]
    }

    /// `∂_x^β A(x, y)` for a multi-index `β` of length `dim`.
    pub fn slow_derivative(&self, beta: &[usize], x: &[f64], y: &[f64]) -> Mat {
        let order: usize = beta.iter().sum();
        if order == 0 {
            return self.eval(x, y);
        }
        match &self.profile {
            Profile::Constant(_) | Profile::Product2d => scalar(0.0),
            Profile::Sine1d {
                phase_x, frozen_x, ..
            } => match frozen_x {
                Some(_) => scalar(0.0),
                None => scalar(0.5 * sin_derivative(order, x[0], *phase_x)),
            },
            Profile::Modulated2d => {
                if beta[0] > 0 {
                    scalar(0.0)
                } else {
                    scalar(sin_derivative(beta[1], x[1], 0.0) * (2.0 * PI * y[0]).cos())
                }
            }
            Profile::Custom(_) => self.fd_derivative(beta, x, y),
        }
    }

    /// `[∂_{x_1} A, ..., ∂_{x_d} A]`.
    pub fn slow_grad(&self, x: &[f64], y: &[f64]) -> Vec<Mat> {
        (0..self.dim)
            .map(|j| {
                let mut beta = vec![0; self.dim];
                beta[j] = 1;
                self.slow_derivative(&beta, x, y)
            })
            .collect()
    }

    fn fd_derivative(&self, beta: &[usize], x: &[f64], y: &[f64]) -> Mat {
        let Some(j) = beta.iter().position(|&b| b > 0) else {
            return self.eval(x, y);
        };
        let h = 1e-3;
        let mut lower = beta.to_vec();
        lower[j] -= 1;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let p = self.fd_derivative(&lower, &xp, y);
        let m = self.fd_derivative(&lower, &xm, y);
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = (p[r][c] - m[r][c]) / (2.0 * h);
            }
        }
        out
    }

    /// Samples the field on a regular grid of `samples` points per axis in
    /// `x ∈ [0, 1]^d` and `y ∈ [0, 1)^d`.
    pub fn validate(&self, samples: usize) -> Result<ValidationReport> {
        if samples < 16 {
            return Err(invalid(format!(
                "validation needs >= 16 samples per axis, got {samples}"
            )));
        }
        let d = self.dim;
        let axis_x: Vec<f64> = (0..samples)
            .map(|i| i as f64 / (samples - 1) as f64)
            .collect();
        let axis_y: Vec<f64> = (0..samples).map(|i| i as f64 / samples as f64).collect();
        let points = |axis: &[f64]| -> Vec<Vec<f64>> {
            if d == 1 {
                axis.iter().map(|&a| vec![a]).collect()
            } else {
                axis.iter()
                    .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
                    .collect()
            }
        };
        let xs = points(&axis_x);
        let ys = points(&axis_y);
        let mut report = ValidationReport {
            c1: f64::INFINITY,
            c2: f64::NEG_INFINITY,
            symmetry: 0.0,
            periodicity: 0.0,
        };
        for x in &xs {
            for y in &ys {
                let a = self.eval(x, y);
                let (lo, hi) = eigen_range(&a, d);
                if lo <= 0.0 || !lo.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        x: x.clone(),
                        y: y.clone(),
                        min_eig: lo,
                    });
                }
                report.c1 = report.c1.min(lo);
                report.c2 = report.c2.max(hi);
                if d == 2 {
                    report.symmetry = report.symmetry.max((a[0][1] - a[1][0]).abs());
                }
                for j in 0..d {
                    let mut ys = y.clone();
                    ys[j] += 1.0;
                    let b = self.eval(x, &ys);
                    for r in 0..d {
                        for c in 0..d {
                            report.periodicity = report.periodicity.max((a[r][c] - b[r][c]).abs());
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Smallest and largest eigenvalue of the leading `d × d` block.
pub fn eigen_range(a: &Mat, d: usize) -> (f64, f64) {
    if d == 1 {
        return (a[0][0], a[0][0]);
    }
    let m = 0.5 * (a[0][0] + a[1][1]);
    let off = 0.5 * (a[0][1] + a[1][0]);
    let r = (0.25 * (a[0][0] - a[1][1]).powi(2) + off * off).sqrt();
    (m - r, m + r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// Smallest Rayleigh quotient found.
    pub c1: f64,
    /// Largest Rayleigh quotient found.
    pub c2: f64,
    pub symmetry: f64,
    pub periodicity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_has_unit_bounds() {
        let f = CoefficientField::constant(2, 1.0).unwrap();
        let r = f.validate(16).unwrap();
        assert_eq!((r.c1, r.c2), (1.0, 1.0));
    }

    #[test]
    fn catalog_fields_respect_documented_bounds() {
        for name in CATALOG {
            let f = CoefficientField::catalog(name).unwrap();
            let r = f.validate(24).unwrap();
            assert!(r.c1 >= f.c1() - 1e-12, "{name}: {} < {}", r.c1, f.c1());
            assert!(r.c2 <= f.c2() + 1e-12, "{name}: {} > {}", r.c2, f.c2());
            assert!(r.periodicity < 1e-12, "{name}");
            assert_eq!(r.symmetry, 0.0);
        }
    }

    #[test]
    fn sign_changing_coefficient_is_rejected() {
        let f =
            CoefficientField::custom(1, "bad", 0.1, 2.0, |_, y| scalar((2.0 * PI * y[0]).sin()))
                .unwrap();
        match f.validate(16) {
            Err(Error::NotPositiveDefinite { min_eig, .. }) => assert!(min_eig <= 0.0),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn printed_formulas() {
        let f = CoefficientField::catalog("periodic-1d").unwrap();
        let y = 0.3;
        assert_abs_diff_eq!(
            f.eval_scalar(&[0.7], &[y]),
            1.1 + 0.5 * (0.1f64.sin() + (2.0 * PI * y + 2.0).sin()),
            epsilon = 1e-15
        );
        let g = CoefficientField::catalog("locally-periodic-2d").unwrap();
        let (x, y) = ([0.2, 0.4], [0.1, 0.8]);
        let expected =
            1.5 + (2.0 * PI * y[0]).sin() + (2.0 * PI * x[1]).sin() * (2.0 * PI * y[0]).cos();
        assert_abs_diff_eq!(g.eval_scalar(&x, &y), expected, epsilon = 1e-15);
        assert!(CoefficientField::catalog("nope").is_err());
        assert_eq!(
            CoefficientField::catalog("constant-2d:3").unwrap().c2(),
            3.0
        );
    }

    #[test]
    fn slow_gradient_matches_central_differences() {
        let h = 1e-4;
        for name in CATALOG {
            let f = CoefficientField::catalog(name).unwrap();
            let d = f.dim();
            let x = vec![0.31; d];
            let y = vec![0.17; d];
            let grad = f.slow_grad(&x, &y);
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f.eval_scalar(&xp, &y) - f.eval_scalar(&xm, &y)) / (2.0 * h);
                let scale = fd.abs().max(1.0);
                assert!((grad[j][0][0] - fd).abs() / scale < 1e-6, "{name} axis {j}");
            }
        }
    }

    #[test]
    fn higher_slow_derivatives_match_differences() {
        let f = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let h = 1e-3;
        let (x, y) = (0.4, 0.6);
        let d1 = |x: f64| f.slow_derivative(&[1], &[x], &[y])[0][0];
        let fd = (d1(x + h) - d1(x - h)) / (2.0 * h);
        assert_abs_diff_eq!(
            f.slow_derivative(&[2], &[x], &[y])[0][0],
            fd,
            epsilon = 1e-3
        );
    }

    #[test]
    fn custom_field_uses_difference_fallback() {
        let f = CoefficientField::custom(1, "quad", 1.0, 3.0, |x, _| scalar(1.0 + x[0] * x[0]))
            .unwrap();
        assert_abs_diff_eq!(f.slow_grad(&[0.5], &[0.0])[0][0][0], 1.0, epsilon = 1e-8);
        assert!(!f.is_x_independent());
    }
}
