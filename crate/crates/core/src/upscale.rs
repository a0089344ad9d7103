//! HMM flux by space-time kernel averaging, and its error against a reference.

use crate::error::{Error, Result};
use crate::homog::{homogenized_flux, homogenized_tensor_with, CellOptions};
use crate::kernels::Kernel;
use crate::micro::{solve_micro, MicroOptions, MicroProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxSource {
    Hmm {
        eps: f64,
        eta: f64,
        tau: f64,
        p: usize,
        q: usize,
        pts_per_eps: usize,
    },
    /// Cell-problem flux computed on an `n^d` grid.
    Reference { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxVector {
    pub value: Vec<f64>,
    pub r0: Vec<f64>,
    pub slope: Vec<f64>,
    pub source: FluxSource,
}

/// Space-time averaged micro flux around `problem.r0`.
pub fn hmm_flux(problem: &MicroProblem, kernel: &Kernel) -> Result<FluxVector> {
    let opts = MicroOptions {
        kernel: Some(kernel.clone()),
        ..MicroOptions::default()
    };
    let sol = solve_micro(problem, &opts)?;
    let value = sol.flux.expect("flux requested");
    let cap = problem.field.c2() * problem.slope.iter().map(|s| s.abs()).fold(0.0, f64::max) * 10.0
        + 1e-300;
    if value.iter().any(|v| !v.is_finite() || v.abs() > cap) {
        return Err(Error::Mismatch(format!(
            "micro flux {value:?} outside sanity bound {cap:e}"
        )));
    }
    Ok(FluxVector {
        value,
        r0: problem.r0.clone(),
        slope: problem.slope.clone(),
        source: FluxSource::Hmm {
            eps: problem.eps,
            eta: problem.eta,
            tau: problem.tau,
            p: kernel.p(),
            q: kernel.q(),
            pts_per_eps: problem.pts_per_eps,
        },
    })
}

/// Homogenized flux from the discrete cell problem on the same stencil,
/// resolution and cell phase as the micro grid of `problem`. This is the
/// value the discrete HMM flux converges to as `ε/η → 0`.
pub fn matched_reference(problem: &MicroProblem) -> Result<FluxVector> {
    let phase = problem.phase();
    let opts = CellOptions {
        phase,
        ..CellOptions::default()
    };
    let t = homogenized_tensor_with(&problem.field, &problem.r0, problem.pts_per_eps, opts)?;
    Ok(homogenized_flux(&t, &problem.slope))
}

/// Homogenized flux from a resolved cell problem (`n` points per axis).
pub fn exact_reference(problem: &MicroProblem, n: usize) -> Result<FluxVector> {
    let t = homogenized_tensor_with(&problem.field, &problem.r0, n, CellOptions::default())?;
    Ok(homogenized_flux(&t, &problem.slope))
}

/// `|F - F̂|_∞`.
pub fn upscaling_error(f: &FluxVector, reference: &FluxVector) -> Result<f64> {
    let close = |a: &[f64], b: &[f64]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
    };
    if !close(&f.r0, &reference.r0) {
        return Err(Error::Mismatch(format!(
            "r0 {:?} vs {:?}",
            f.r0, reference.r0
        )));
    }
    if !close(&f.slope, &reference.slope) {
        return Err(Error::Mismatch(format!(
            "slope {:?} vs {:?}",
            f.slope, reference.slope
        )));
    }
    if f.value.len() != reference.value.len() {
        return Err(Error::Mismatch("flux dimensions differ".into()));
    }
    Ok(f.value
        .iter()
        .zip(&reference.value)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::CoefficientField;
    use approx::assert_abs_diff_eq;

    fn flux(value: Vec<f64>) -> FluxVector {
        FluxVector {
            value,
            r0: vec![0.0, 0.0],
            slope: vec![1.0, 0.0],
            source: FluxSource::Reference { n: 32 },
        }
    }

    #[test]
    fn error_arithmetic() {
        let a = flux(vec![1.0, 0.0]);
        let b = flux(vec![0.9, 0.05]);
        assert_abs_diff_eq!(upscaling_error(&a, &b).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(upscaling_error(&a, &a).unwrap(), 0.0);
        let mut c = b.clone();
        c.slope = vec![0.0, 1.0];
        assert!(matches!(upscaling_error(&a, &c), Err(Error::Mismatch(_))));
    }

    #[test]
    fn constant_medium_flux_is_exact() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::constant(1, 1.7).unwrap();
        let p = MicroProblem::new(field, vec![0.3], vec![0.8], 0.01, 0.05);
        let f = hmm_flux(&p, &k).unwrap();
        assert_abs_diff_eq!(f.value[0], 1.7 * 0.8, epsilon = 1e-10);
    }

    #[test]
    fn constant_medium_flux_is_exact_in_2d() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::constant(2, 0.9).unwrap();
        let p = MicroProblem::new(field, vec![0.0, 0.0], vec![1.0, -2.0], 0.05, 0.1)
            .with_pts_per_eps(16);
        let f = hmm_flux(&p, &k).unwrap();
        assert_abs_diff_eq!(f.value[0], 0.9, epsilon = 1e-10);
        assert_abs_diff_eq!(f.value[1], -1.8, epsilon = 1e-10);
    }

    #[test]
    fn flux_is_linear_in_slope() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let base = MicroProblem::new(field, vec![0.2], vec![1.0], 0.0025, 0.01);
        let f1 = hmm_flux(&base, &k).unwrap();
        let mut scaled = base.clone();
        scaled.slope = vec![-3.0];
        let f3 = hmm_flux(&scaled, &k).unwrap();
        assert_abs_diff_eq!(f3.value[0], -3.0 * f1.value[0], epsilon = 1e-12);
    }

    #[test]
    fn swapping_axes_swaps_components() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::catalog("periodic-2d").unwrap();
        let p = MicroProblem::new(field, vec![0.0, 0.0], vec![1.0, 0.5], 0.05, 0.1)
            .with_pts_per_eps(16);
        let a = hmm_flux(&p, &k).unwrap();
        let mut q = p.clone();
        q.slope = vec![0.5, 1.0];
        let b = hmm_flux(&q, &k).unwrap();
        assert_abs_diff_eq!(a.value[0], b.value[1], epsilon = 1e-12);
        assert_abs_diff_eq!(a.value[1], b.value[0], epsilon = 1e-12);
    }

    #[test]
    fn periodic_flux_approaches_matched_reference() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::catalog("periodic-1d").unwrap();
        let p = MicroProblem::new(field, vec![0.0], vec![1.0], 0.01 / 16.0, 0.01);
        let f = hmm_flux(&p, &k).unwrap();
        let r = matched_reference(&p).unwrap();
        assert!(upscaling_error(&f, &r).unwrap() < 1e-7);
    }
}
