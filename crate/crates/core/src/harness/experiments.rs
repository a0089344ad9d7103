//! Experiment runners behind the CLI subcommands.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{
    ConvergenceConfig, ExpansionConfig, ExpansionExperiment, FluxModeKind, MacroProblemKind,
    MacroRunConfig,
};
use super::emit::{emit_series, series_path};
use super::fit::{fit_rate, fit_tail};
use super::sweep::sweep;
use super::{num, ConvergenceRecord, Series};
use crate::error::{Error, Result};
use crate::expansion::{
    expansion_error, flux_decomposition, oscillation_envelope, solve_hierarchy, solve_v0,
    time_average_study, v00_structure, CellSystem, ExpansionSetup,
};
use crate::kernels::Kernel;
use crate::macro_solver::{
    effective_matrix, run_macro, FluxMode, MacroConfig, MacroTrajectory, SourceFn, SpaceFn,
};
use crate::media::CoefficientField;
use crate::micro::MicroProblem;

type ExactFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One series per coefficient of `cfg`, written to `cfg.output` when set.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<Vec<Series>> {
    let mut out = Vec::with_capacity(cfg.coefficients.len());
    for label in &cfg.coefficients {
        let records = sweep(cfg, label)?;
        let fit = match cfg.fit_tail {
            Some(n) => fit_tail(&records, n, cfg.floor),
            None => fit_rate(&records, cfg.floor),
        };
        let fit = fit
            .map_err(|e| log::warn!("{label}: no rate fitted ({e})"))
            .ok();
        out.push(Series::new(label.clone(), records, fit));
    }
    if let Some(path) = &cfg.output {
        emit_series(&out, path)?;
    }
    Ok(out)
}

#[derive(Clone)]
pub struct MacroOutcome {
    pub trajectory: MacroTrajectory,
    /// Final-time discrete L² error when the problem has an exact solution.
    pub l2_error: Option<f64>,
}

fn flux_mode(cfg: &MacroRunConfig) -> FluxMode {
    match cfg.mode {
        FluxModeKind::Reference => FluxMode::Reference { n: cfg.cell_n },
        FluxModeKind::Hmm => FluxMode::Hmm {
            eps: cfg.eps,
            eta: cfg.eta,
            tau: cfg.tau.unwrap_or(cfg.eta),
            p: cfg.p,
            q: cfg.q,
            pts_per_eps: cfg.pts_per_eps,
        },
    }
}

/// Solver configuration and, where available, the exact solution.
pub fn build_macro(cfg: &MacroRunConfig) -> Result<(MacroConfig, Option<ExactFn>)> {
    let field = CoefficientField::catalog(&cfg.coefficient)?;
    let d = field.dim();
    let domain: Vec<(f64, f64)> = match &cfg.domain {
        Some(v) => v.iter().map(|[a, b]| (*a, *b)).collect(),
        None => vec![(0.0, 1.0); d],
    };
    if domain.len() != d {
        return Err(Error::Config(format!("domain needs {d} intervals")));
    }
    let mode = flux_mode(cfg);
    let lo: Vec<f64> = domain.iter().map(|p| p.0).collect();
    let k: Vec<f64> = domain.iter().map(|(a, b)| PI / (b - a)).collect();
    let shape = {
        let (lo, k) = (lo.clone(), k.clone());
        move |x: &[f64]| -> f64 {
            (0..x.len())
                .map(|j| (k[j] * (x[j] - lo[j])).sin())
                .product()
        }
    };
    // Problems with exact solutions need a constant diagonal effective tensor.
    let omega2 = || -> Result<f64> {
        if !field.is_x_independent() {
            return Err(Error::Config(format!(
                "problem '{:?}' needs an x-independent coefficient",
                cfg.problem
            )));
        }
        let mid: Vec<f64> = domain.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let m = effective_matrix(&field, &mid, &mode)?;
        if d == 2 && (m[0][1].abs() > 1e-12 || m[1][0].abs() > 1e-12) {
            return Err(Error::Config(
                "exact solutions need a diagonal effective tensor".into(),
            ));
        }
        Ok((0..d).map(|j| m[j][j] * k[j] * k[j]).sum())
    };
    let zero: SpaceFn = Arc::new(|_| 0.0);
    let (initial, source, exact): (SpaceFn, Option<SourceFn>, Option<ExactFn>) = match cfg.problem {
        MacroProblemKind::Manufactured => {
            let w2 = omega2()?;
            let s1 = shape.clone();
            let s2 = shape.clone();
            (
                zero.clone(),
                Some(Arc::new(move |t: f64, x: &[f64]| {
                    (2.0 + w2 * t * t) * s1(x)
                })),
                Some(Arc::new(move |t: f64, x: &[f64]| t * t * s2(x))),
            )
        }
        MacroProblemKind::StandingWave => {
            let w = omega2()?.sqrt();
            let s1 = shape.clone();
            let s2 = shape.clone();
            (
                Arc::new(move |x: &[f64]| s1(x)),
                None,
                Some(Arc::new(move |t: f64, x: &[f64]| (w * t).cos() * s2(x))),
            )
        }
        MacroProblemKind::Pulse => {
            let c = cfg
                .pulse_center
                .clone()
                .unwrap_or_else(|| domain.iter().map(|(a, b)| 0.5 * (a + b)).collect());
            if c.len() != d {
                return Err(Error::Config(format!("pulse_center needs {d} components")));
            }
            let w = cfg.pulse_width;
            if !(w > 0.0) {
                return Err(Error::Config("pulse_width must be positive".into()));
            }
            let g: SpaceFn = Arc::new(move |x: &[f64]| {
                let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
                (-r2 / (w * w)).exp()
            });
            (g, None, None)
        }
    };
    let mut mc = MacroConfig::new(field, cfg.cells, cfg.t_final, initial, mode);
    mc.domain = domain;
    mc.cfl = cfg.cfl;
    mc.dt = cfg.dt;
    mc.source = source;
    mc.velocity = Some(zero);
    mc.snapshot_every = cfg.snapshot_every;
    mc.validate()?;
    Ok((mc, exact))
}

/// Runs the configured macro problem and writes snapshots to `cfg.output`.
pub fn run_macro_config(cfg: &MacroRunConfig) -> Result<MacroOutcome> {
    let (mc, exact) = build_macro(cfg)?;
    let trajectory = run_macro(&mc)?;
    let l2_error = exact.map(|u| trajectory.l2_error(&*u));
    if let Some(path) = &cfg.output {
        trajectory.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(MacroOutcome {
        trajectory,
        l2_error,
    })
}

/// Final-time L² error against the exact solution for each cell count,
/// with `H` as sweep variable.
pub fn macro_convergence(cfg: &MacroRunConfig, cells: &[usize]) -> Result<Series> {
    let records: Result<Vec<ConvergenceRecord>> = cells
        .par_iter()
        .map(|&n| {
            let c = MacroRunConfig {
                cells: n,
                output: None,
                snapshot_every: None,
                ..cfg.clone()
            };
            let (mc, exact) = build_macro(&c)?;
            let exact =
                exact.ok_or_else(|| Error::Config("problem has no exact solution".into()))?;
            let traj = run_macro(&mc)?;
            Ok(ConvergenceRecord::new(mc.spacing(), traj.l2_error(&*exact))
                .with("coefficient", &cfg.coefficient)
                .with("cells", n)
                .with("dt", num(traj.dt))
                .with("t_final", num(cfg.t_final)))
        })
        .collect();
    let mut records = records?;
    records.sort_by(|a, b| a.sweep_var.total_cmp(&b.sweep_var));
    Ok(Series::fitted(
        format!("{:?}", cfg.problem).to_lowercase(),
        records,
        0.0,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct ExpansionOutcome {
    pub series: Vec<Series>,
    /// Scalar diagnostics, in a fixed order.
    pub summary: Vec<(String, f64)>,
    /// `(y, v0, v00)` at the final time (fig3).
    pub profile: Vec<[f64; 3]>,
}

impl ExpansionOutcome {
    pub fn series(&self, label: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.label == label)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Series files suffixed by label, plus `_profile` and `_summary` files
    /// when present.
    pub fn write(&self, base: &Path) -> Result<()> {
        emit_series(&self.series, base)?;
        if !self.profile.is_empty() {
            let mut w = BufWriter::new(File::create(series_path(base, "profile"))?);
            writeln!(w, "y,v0,v00")?;
            for [y, v0, v00] in &self.profile {
                writeln!(w, "{y:.12e},{v0:.12e},{v00:.12e}")?;
            }
            w.flush()?;
        }
        if !self.summary.is_empty() {
            let mut w = BufWriter::new(File::create(series_path(base, "summary"))?);
            writeln!(w, "quantity,value")?;
            for (k, v) in &self.summary {
                writeln!(w, "{k},{v:.12e}")?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn setup_for(cfg: &ExpansionConfig, exp: ExpansionExperiment) -> Result<ExpansionSetup> {
    let field = CoefficientField::catalog(&cfg.coefficient)?;
    let d = field.dim();
    let mut s = ExpansionSetup::new(
        field,
        cfg.slope.clone().unwrap_or_else(|| vec![1.0; d]),
        cfg.half_width_for(exp),
        cfg.t_final_for(exp),
    );
    if let Some(r0) = &cfg.r0 {
        s.r0 = r0.clone();
    }
    s.pts_per_unit = cfg.pts_per_unit;
    s.cfl = cfg.cfl;
    s.validate()?;
    Ok(s)
}

/// Runs one expansion experiment and writes its files to `cfg.output`.
pub fn run_expansion(cfg: &ExpansionConfig, exp: ExpansionExperiment) -> Result<ExpansionOutcome> {
    let outcome = match exp {
        ExpansionExperiment::Fig2 => fig2(cfg)?,
        ExpansionExperiment::Fig3 => fig3(cfg)?,
        ExpansionExperiment::Fig4 => fig4(cfg)?,
        ExpansionExperiment::TimeAverages => time_average_series(cfg)?,
        ExpansionExperiment::FluxDecomp => flux_series(cfg)?,
    };
    if let Some(path) = &cfg.output {
        outcome.write(path)?;
    }
    Ok(outcome)
}

fn fig2(cfg: &ExpansionConfig) -> Result<ExpansionOutcome> {
    let setup = setup_for(cfg, ExpansionExperiment::Fig2)?;
    let errs = expansion_error(&setup, cfg.orders, &cfg.eps, cfg.window)?;
    let series = (0..=cfg.orders)
        .map(|m| {
            let mut records: Vec<ConvergenceRecord> = errs
                .iter()
                .map(|e| {
                    ConvergenceRecord::new(e.eps, e.errors[m])
                        .with("order", m)
                        .with("window", num(cfg.window))
                        .with("half_width", setup.half_width)
                        .with("t_final", num(setup.t_final))
                })
                .collect();
            records.sort_by(|a, b| a.sweep_var.total_cmp(&b.sweep_var));
            Series::fitted(format!("E{m}"), records, cfg.floor)
        })
        .collect();
    Ok(ExpansionOutcome {
        series,
        ..ExpansionOutcome::default()
    })
}

fn fig3(cfg: &ExpansionConfig) -> Result<ExpansionOutcome> {
    let setup = setup_for(cfg, ExpansionExperiment::Fig3)?;
    if setup.dim() != 1 {
        return Err(Error::Config("fig3 is a 1D experiment".into()));
    }
    let v0 = solve_v0(&setup)?;
    let window = cfg.window.min(setup.clean_window());
    let (defect, size) = v00_structure(&setup, &v0, window)?;
    let profile = v0
        .final_level()
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            let y = setup.coord(a);
            [y, v, v - setup.slope[0] * y]
        })
        .collect();
    let cell = CellSystem::new(
        &setup.field,
        &setup.r0,
        &setup.slope,
        setup.phase,
        setup.pts_per_unit,
    )?;
    let (steps, dt) = setup.time_grid();
    let evo = cell.evolve(dt, steps);
    let h1 = evo.v00_h1_history(cell.grid());
    let records = h1
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, v)| ConvergenceRecord::new(n as f64 * dt, *v).with("level", n))
        .collect();
    let h1_max = h1.iter().copied().fold(0.0, f64::max);
    let h1_mean = h1.iter().sum::<f64>() / h1.len() as f64;
    Ok(ExpansionOutcome {
        series: vec![Series::new("v00-h1", records, None)],
        summary: vec![
            ("periodicity_defect".into(), defect),
            ("v00_max".into(), size),
            ("v00_h1_max".into(), h1_max),
            ("v00_h1_mean".into(), h1_mean),
            ("max_cell_mean".into(), evo.max_mean),
        ],
        profile,
    })
}

fn fig4(cfg: &ExpansionConfig) -> Result<ExpansionOutcome> {
    let setup = setup_for(cfg, ExpansionExperiment::Fig4)?;
    let orders = cfg.orders.max(1);
    let terms = solve_hierarchy(&setup, orders)?;
    let range = (cfg.growth_range[0], cfg.growth_range[1]);
    let mut series = Vec::new();
    for (m, term) in terms.iter().enumerate().skip(1) {
        let last = term.levels.len() - 1;
        let (centers, maxima) = oscillation_envelope(&setup, term, last, range)?;
        let records = centers
            .iter()
            .zip(&maxima)
            .map(|(c, v)| {
                ConvergenceRecord::new(*c, *v)
                    .with("order", m)
                    .with("t", num(term.time(last)))
            })
            .collect();
        series.push(Series::fitted(format!("v{m}"), records, 0.0));
    }
    Ok(ExpansionOutcome {
        series,
        ..ExpansionOutcome::default()
    })
}

fn sorted_alpha(cfg: &ExpansionConfig) -> Result<Vec<f64>> {
    let mut a = cfg.alpha.clone();
    if a.is_empty() || a.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
        return Err(Error::Config("alpha values must lie in (0, 1]".into()));
    }
    a.sort_by(f64::total_cmp);
    Ok(a)
}

fn time_average_series(cfg: &ExpansionConfig) -> Result<ExpansionOutcome> {
    let field = CoefficientField::catalog(&cfg.coefficient)?;
    let d = field.dim();
    let r0 = cfg.r0.clone().unwrap_or_else(|| vec![0.0; d]);
    let slope = cfg.slope.clone().unwrap_or_else(|| vec![1.0; d]);
    let kernel = Kernel::new(cfg.p, cfg.q)?;
    let alphas = sorted_alpha(cfg)?;
    let reports: Result<Vec<_>> = alphas
        .par_iter()
        .map(|&a| time_average_study(&field, &r0, &slope, &kernel, cfg.cell_n, cfg.cfl, a))
        .collect();
    let reports = reports?;
    let make = |label: &str, f: &dyn Fn(usize) -> f64| {
        let records = reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                ConvergenceRecord::new(r.alpha, f(i))
                    .with("cell_n", cfg.cell_n)
                    .with("q", cfg.q)
            })
            .collect();
        Series::fitted(label, records, cfg.floor)
    };
    let series = vec![
        make("r00", &|i| reports[i].residuals.r00),
        make("r11", &|i| reports[i].residuals.r11),
        make("r10", &|i| reports[i].residuals.r10),
        make("corrector", &|i| reports[i].corrector),
    ];
    let max_mean = reports.iter().map(|r| r.max_mean).fold(0.0, f64::max);
    Ok(ExpansionOutcome {
        series,
        summary: vec![("max_cell_mean".into(), max_mean)],
        profile: Vec::new(),
    })
}

fn flux_series(cfg: &ExpansionConfig) -> Result<ExpansionOutcome> {
    let field = CoefficientField::catalog(&cfg.coefficient)?;
    let d = field.dim();
    let r0 = cfg.r0.clone().unwrap_or_else(|| vec![0.0; d]);
    let slope = cfg.slope.clone().unwrap_or_else(|| vec![1.0; d]);
    let kernel = Kernel::new(cfg.p, cfg.q)?;
    let alphas = sorted_alpha(cfg)?;
    let decomps: Result<Vec<_>> = alphas
        .par_iter()
        .map(|&a| {
            let p = MicroProblem::new(
                field.clone(),
                r0.clone(),
                slope.clone(),
                a * cfg.eta,
                cfg.eta,
            )
            .with_pts_per_eps(cfg.cell_n)
            .with_cfl(cfg.cfl);
            flux_decomposition(&p, &kernel)
        })
        .collect();
    let decomps = decomps?;
    let inf = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let make = |label: &str, f: &dyn Fn(usize) -> f64| {
        let records = alphas
            .iter()
            .enumerate()
            .map(|(i, a)| {
                ConvergenceRecord::new(*a, f(i))
                    .with("eta", num(cfg.eta))
                    .with("pts_per_eps", cfg.cell_n)
                    .with("q", cfg.q)
            })
            .collect();
        Series::fitted(label, records, cfg.floor)
    };
    let series = vec![
        make("f0", &|i| decomps[i].f0_error()),
        make("f1", &|i| decomps[i].f1_norm()),
        make("delta", &|i| inf(&decomps[i].delta)),
        make("tail", &|i| inf(&decomps[i].tail)),
    ];
    Ok(ExpansionOutcome {
        series,
        ..ExpansionOutcome::default()
    })
}
