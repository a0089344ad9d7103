//! Rate fitting over record series.

use super::ConvergenceRecord;
use crate::error::Result;
use crate::fit::fit_loglog;

/// Default error floor below which records are excluded from fits.
pub const DEFAULT_FLOOR: f64 = 1e-11;

/// Largest log-deviation of a point from the fitted line before the fit is
/// flagged as unreliable.
pub const NOISY_RESIDUAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute log-deviation from the line.
    pub residual: f64,
    pub points: usize,
    /// Set when `residual > NOISY_RESIDUAL`.
    pub noisy: bool,
}

/// Log-log least-squares rate of `error` against `sweep_var`, using records
/// above `floor`; at least 3 must remain.
pub fn fit_rate(records: &[ConvergenceRecord], floor: f64) -> Result<RateFit> {
    let xs: Vec<f64> = records.iter().map(|r| r.sweep_var).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.error).collect();
    let f = fit_loglog(&xs, &ys, floor, 3)?;
    if f.residual > NOISY_RESIDUAL {
        log::warn!(
            "rate fit residual {:.3} exceeds {NOISY_RESIDUAL}",
            f.residual
        );
    }
    Ok(RateFit {
        slope: f.slope,
        intercept: f.intercept,
        residual: f.residual,
        points: f.points,
        noisy: f.residual > NOISY_RESIDUAL,
    })
}

/// [`fit_rate`] over the `n` records with the smallest sweep variable.
pub fn fit_tail(records: &[ConvergenceRecord], n: usize, floor: f64) -> Result<RateFit> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.sweep_var.total_cmp(&b.sweep_var));
    sorted.truncate(n);
    fit_rate(&sorted, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn series(f: impl Fn(f64) -> f64) -> Vec<ConvergenceRecord> {
        (1..=6)
            .map(|k| {
                let x = 0.5f64.powi(k);
                ConvergenceRecord::new(x, f(x))
            })
            .collect()
    }

    #[test]
    fn exact_square_law() {
        let f = fit_rate(&series(|x| 3.0 * x * x), DEFAULT_FLOOR).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-6);
        assert!(!f.noisy);
    }

    #[test]
    fn floor_points_are_excluded() {
        let recs = series(|x| if x < 0.05 { 1e-13 } else { 3.0 * x * x });
        let f = fit_rate(&recs, DEFAULT_FLOOR).unwrap();
        assert_eq!(f.points, 4);
        assert!((f.slope - 2.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_data_is_flagged() {
        let noise = [1.0, 40.0, 0.02, 30.0, 0.05, 1.0];
        let recs: Vec<_> = series(|x| x * x)
            .into_iter()
            .zip(noise)
            .map(|(r, n)| ConvergenceRecord::new(r.sweep_var, r.error * n))
            .collect();
        assert!(fit_rate(&recs, DEFAULT_FLOOR).unwrap().noisy);
    }

    #[test]
    fn all_below_floor_is_rejected() {
        let recs = series(|_| 1e-12);
        assert!(matches!(
            fit_rate(&recs, DEFAULT_FLOOR),
            Err(Error::TooFewPoints { usable: 0, .. })
        ));
    }

    #[test]
    fn tail_uses_smallest_sweep_values() {
        let recs = series(|x| if x > 0.1 { 1.0 } else { x * x });
        let f = fit_tail(&recs, 3, DEFAULT_FLOOR).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
    }
}
