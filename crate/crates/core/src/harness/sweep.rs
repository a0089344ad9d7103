//! Upscaling-error sweeps over `ε`.

use rayon::prelude::*;

use super::config::{ConvergenceConfig, ReferenceKind, ScalePoint, SweepVar};
use super::{list, num, ConvergenceRecord};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::media::CoefficientField;
use crate::micro::MicroProblem;
use crate::upscale::{exact_reference, hmm_flux, matched_reference, upscaling_error};

/// Fewest surviving points a sweep accepts.
pub const MIN_SWEEP_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

/// [`sweep_with`] over the rayon pool.
pub fn sweep(cfg: &ConvergenceConfig, coefficient: &str) -> Result<Vec<ConvergenceRecord>> {
    sweep_with(cfg, coefficient, Execution::Parallel)
}

/// `|F - F̂|_∞` for each scale point of `cfg`, sorted by sweep variable.
/// Failed points are logged and dropped.
pub fn sweep_with(
    cfg: &ConvergenceConfig,
    coefficient: &str,
    exec: Execution,
) -> Result<Vec<ConvergenceRecord>> {
    let field = CoefficientField::catalog(coefficient)?;
    let points = cfg.schedule(field.dim())?;
    if points.len() < MIN_SWEEP_POINTS {
        return Err(Error::TooFewPoints {
            usable: points.len(),
            required: MIN_SWEEP_POINTS,
        });
    }
    let kernel = Kernel::new(cfg.p, cfg.q)?;
    let run = |pt: &ScalePoint| (*pt, point_record(cfg, &field, &kernel, pt));
    let results: Vec<_> = match exec {
        Execution::Parallel => points.par_iter().map(run).collect(),
        Execution::Serial => points.iter().map(run).collect(),
    };
    let mut records = Vec::with_capacity(results.len());
    for (pt, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => log::warn!(
                "{coefficient}: point eps={:e} eta={:e} failed: {e}",
                pt.eps,
                pt.eta
            ),
        }
    }
    if records.len() < MIN_SWEEP_POINTS {
        return Err(Error::TooFewPoints {
            usable: records.len(),
            required: MIN_SWEEP_POINTS,
        });
    }
    records.sort_by(|a, b| a.sweep_var.total_cmp(&b.sweep_var));
    Ok(records)
}

fn point_record(
    cfg: &ConvergenceConfig,
    field: &CoefficientField,
    kernel: &Kernel,
    pt: &ScalePoint,
) -> Result<ConvergenceRecord> {
    let d = field.dim();
    let r0 = cfg.r0.clone().unwrap_or_else(|| vec![0.0; d]);
    let slope = cfg.slope.clone().unwrap_or_else(|| vec![1.0; d]);
    let problem = MicroProblem::new(field.clone(), r0.clone(), slope.clone(), pt.eps, pt.eta)
        .with_tau(pt.tau)
        .with_pts_per_eps(cfg.pts_per_eps)
        .with_cfl(cfg.cfl);
    let flux = hmm_flux(&problem, kernel)?;
    let (reference, ref_label) = match cfg.reference {
        ReferenceKind::Matched => (matched_reference(&problem)?, "matched".to_string()),
        ReferenceKind::Resolved => {
            let n = cfg.reference_n(d);
            (exact_reference(&problem, n)?, format!("resolved-{n}"))
        }
    };
    let error = upscaling_error(&flux, &reference)?;
    let sweep_var = match cfg.sweep_var {
        SweepVar::Ratio => pt.eps / pt.eta,
        SweepVar::Eps => pt.eps,
    };
    Ok(ConvergenceRecord::new(sweep_var, error)
        .with("coefficient", field.label())
        .with("dim", d)
        .with("eps", num(pt.eps))
        .with("eta", num(pt.eta))
        .with("tau", num(pt.tau))
        .with("p", cfg.p)
        .with("q", cfg.q)
        .with("pts_per_eps", cfg.pts_per_eps)
        .with("cfl", num(cfg.cfl))
        .with("r0", list(&r0))
        .with("slope", list(&slope))
        .with("reference", ref_label)
        .with("flux", list(&flux.value))
        .with("reference_flux", list(&reference.value)))
}
