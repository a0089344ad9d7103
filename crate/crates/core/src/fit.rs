//! Least-squares lines in log-log coordinates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a point from the line, in log units.
    pub residual: f64,
    pub points: usize,
}

/// Fits `ln y = intercept + slope · ln x` over points with `x > 0` and
/// `y > floor`.
pub fn fit_loglog(xs: &[f64], ys: &[f64], floor: f64, min_points: usize) -> Result<LineFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && y.is_finite() && **y > floor)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < min_points.max(2) {
        return Err(Error::TooFewPoints {
            usable: pts.len(),
            required: min_points.max(2),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewPoints {
            usable: 1,
            required: 2,
        });
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).abs())
        .fold(0.0, f64::max);
    Ok(LineFit {
        slope,
        intercept,
        residual,
        points: pts.len(),
    })
}
