//! Averaging kernels with vanishing moments.
//!
//! A kernel of class (p, q) is supported in [-1, 1], has unit mass, its moments
//! of order 1..=p vanish, and it is q times continuously differentiable on the
//! real line once extended by zero. Every kernel built here has the form
//!
//! ```text
//! K(x) = P(x) (1 - x^2)^(q+1),   |x| < 1,
//! ```
//!
//! with `P` an even polynomial whose coefficients come from the moment
//! conditions. Odd moments vanish by symmetry, so only the even ones enter the
//! linear system.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::sum::CompensatedSum;

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    p: usize,
    q: usize,
    /// Coefficients of `P` in powers of `x^2`.
    even: Vec<f64>,
}

/// `∫_{-1}^{1} x^{2k} (1 - x^2)^n dx`, exact up to rounding.
fn weighted_even_moment(k: usize, n: usize) -> f64 {
    let mut v = 2.0 / (2 * k + 1) as f64;
    for j in 1..=n {
        v *= (2 * j) as f64 / (2 * k + 2 * j + 1) as f64;
    }
    v
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    falling(n, k) / falling(k, k)
}

impl Kernel {
    /// Builds the kernel of class (p, q).
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p < 1 {
            return Err(invalid(format!(
                "kernel moment order p must be >= 1, got {p}"
            )));
        }
        let m = p / 2;
        let n = q + 1;
        let size = m + 1;
        let system = DMatrix::from_fn(size, size, |i, j| weighted_even_moment(i + j, n));
        let mut rhs = DVector::zeros(size);
        rhs[0] = 1.0;
        let sol = system
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularMoments { p, q })?;
        let residual = (&system * &sol - &rhs).amax();
        if !residual.is_finite() || residual > 1e-10 {
            return Err(Error::SingularMoments { p, q });
        }
        Ok(Kernel {
            p,
            q,
            even: sol.iter().copied().collect(),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Coefficients of the full kernel polynomial on [-1, 1] in powers of `x`.
    pub fn coeffs(&self) -> Vec<f64> {
        let n = self.q + 1;
        let deg = 2 * (self.even.len() - 1) + 2 * n;
        let mut out = vec![0.0; deg + 1];
        for (j, &c) in self.even.iter().enumerate() {
            for i in 0..=n {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                out[2 * j + 2 * i] += c * sign * binomial(n, i);
            }
        }
        out
    }

    fn even_factor(&self, z: f64) -> f64 {
        self.even.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }

    /// K(x); zero outside (-1, 1).
    pub fn eval(&self, x: f64) -> f64 {
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let z = x * x;
        self.even_factor(z) * (1.0 - z).powi(self.q as i32 + 1)
    }

    /// K_h(x) = K(x / h) / h, supported in (-h, h).
    pub fn eval_scaled(&self, h: f64, x: f64) -> f64 {
        self.eval(x / h) / h
    }

    /// Tensor-product kernel `∏_j K_h(x_j)`.
    pub fn eval_scaled_nd(&self, h: f64, x: &[f64]) -> f64 {
        x.iter().map(|&xj| self.eval_scaled(h, xj)).product()
    }

    /// Derivative of order `order` at `x`, computed with the Leibniz rule on the
    /// factored form so that values at the support boundary are exact. At
    /// `|x| = 1` the one-sided derivative from inside the support is returned.
    pub fn derivative(&self, order: usize, x: f64) -> f64 {
        if x.abs() > 1.0 {
            return 0.0;
        }
        if order == 0 {
            return self.eval(x);
        }
        let n = self.q + 1;
        // P(x) = sum_j c_j x^{2j}
        let p_deriv = |k: usize| -> f64 {
            self.even
                .iter()
                .enumerate()
                .filter(|(j, _)| 2 * j >= k)
                .map(|(j, &c)| c * falling(2 * j, k) * x.powi((2 * j - k) as i32))
                .sum::<f64>()
        };
        // d^a (1 - x)^n and d^a (1 + x)^n
        let minus = |a: usize| -> f64 {
            if a > n {
                0.0
            } else {
                let sign = if a.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * falling(n, a) * (1.0 - x).powi((n - a) as i32)
            }
        };
        let plus = |a: usize| -> f64 {
            if a > n {
                0.0
            } else {
                falling(n, a) * (1.0 + x).powi((n - a) as i32)
            }
        };
        let w_deriv = |j: usize| -> f64 {
            (0..=j)
                .map(|a| binomial(j, a) * minus(a) * plus(j - a))
                .sum()
        };
        (0..=order)
            .map(|k| binomial(order, k) * p_deriv(k) * w_deriv(order - k))
            .sum()
    }

    /// Composite Simpson approximation of `∫ K(t) t^r dt` with `quad_points`
    /// subintervals (rounded up to an even count).
    pub fn moment(&self, r: usize, quad_points: usize) -> f64 {
        let n = quad_points.max(2).next_multiple_of(2);
        let h = 2.0 / n as f64;
        let mut acc = CompensatedSum::new();
        for i in 0..=n {
            let t = -1.0 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc.add(w * self.eval(t) * t.powi(r as i32));
        }
        acc.value() * h / 3.0
    }

    /// Closed-form moment `∫ K(t) t^r dt`.
    pub fn moment_exact(&self, r: usize) -> f64 {
        if r % 2 == 1 {
            return 0.0;
        }
        let k = r / 2;
        self.even
            .iter()
            .enumerate()
            .map(|(j, &c)| c * weighted_even_moment(j + k, self.q + 1))
            .sum()
    }
}

/// `|∫ K_η(t) f(t/ε) dt − mean(f)|` for a 1-periodic `f`.
///
/// Trapezoid quadrature with at least 32 nodes per fast period (and never
/// fewer than 4096 on the support); the unit-cell mean uses the periodic
/// trapezoid rule.
pub fn periodic_average_test<F>(kernel: &Kernel, eta: f64, eps: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(eps > 0.0 && eta > 0.0 && eps <= eta) {
        return Err(invalid(format!(
            "need 0 < eps <= eta, got eps={eps}, eta={eta}"
        )));
    }
    let periods = 2.0 * eta / eps;
    let n = ((periods * 32.0).ceil() as usize).max(4096);
    let h = 2.0 * eta / n as f64;
    let mut acc = CompensatedSum::new();
    // endpoints carry K = 0
    for i in 1..n {
        let t = -eta + i as f64 * h;
        acc.add(kernel.eval_scaled(eta, t) * f(t / eps));
    }
    let average = acc.value() * h;

    let m = 4096;
    let mean: CompensatedSum = (0..m).map(|i| f(i as f64 / m as f64)).collect();
    Ok((average - mean.value() / m as f64).abs())
}
