//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.

use std::f64::consts::PI;
use std::time::Instant;

use fdhmm::expansion::{growth_exponent, quasi_poly_decompose, solve_hierarchy, ExpansionSetup};
use fdhmm::fit::fit_loglog;
use fdhmm::harness::{
    fit_rate, macro_convergence, run_convergence, run_expansion, run_macro_config,
    ConvergenceConfig, ExpansionConfig, ExpansionExperiment, FluxModeKind, MacroProblemKind,
    MacroRunConfig, SweepVar,
};
use fdhmm::homog::{arithmetic_mean, harmonic_mean};
use fdhmm::media::{eigen_range, CATALOG};
use fdhmm::{homogenized_tensor, periodic_average_test, CoefficientField, Kernel};

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report(n: u32, pass: bool, start: Instant, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {verdict} ({:.1}s) {detail}",
        start.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_kernel_suite() {
    let start = Instant::now();
    let mut worst_moment: f64 = 0.0;
    let mut worst_boundary: f64 = 0.0;
    for (p, q) in [(1, 0), (3, 2), (3, 6), (5, 4)] {
        let k = Kernel::new(p, q).unwrap();
        worst_moment = worst_moment.max((k.moment_exact(0) - 1.0).abs());
        for r in 1..=p {
            worst_moment = worst_moment.max(k.moment_exact(r).abs());
            worst_moment = worst_moment.max(k.moment(r, 20_000).abs());
        }
        for order in 0..=q {
            for x in [-1.0, 1.0] {
                worst_boundary = worst_boundary.max(k.derivative(order, x).abs());
            }
        }
    }
    report(
        1,
        worst_moment < 1e-12 && worst_boundary < 1e-10,
        start,
        format!(
            "max moment defect {worst_moment:.2e}, max boundary derivative {worst_boundary:.2e}"
        ),
    );
}

#[test]
fn criterion_02_periodic_average_lemma() {
    let start = Instant::now();
    let eta = 0.01;
    let alphas: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
    let mut details = Vec::new();
    let mut pass = true;
    for q in [2, 6] {
        let k = Kernel::new(3, q).unwrap();
        // sin(2πt) is odd and the kernel is even, so its average is exactly zero.
        let odd = alphas
            .iter()
            .map(|a| periodic_average_test(&k, eta, a * eta, |t| (2.0 * PI * t).sin()).unwrap())
            .fold(0.0, f64::max);
        let errs: Vec<f64> = alphas
            .iter()
            .map(|a| {
                periodic_average_test(&k, eta, a * eta, |t| (2.0 * PI * t + 1.0).sin()).unwrap()
            })
            .collect();
        let fit = fit_loglog(&alphas, &errs, 1e-14, 3).unwrap();
        let ok = odd < 1e-14 && fit.slope >= q as f64 + 1.5;
        pass &= ok;
        details.push(format!(
            "q={q}: sin avg {odd:.1e}, shifted slope {:.2} over {} pts",
            fit.slope, fit.points
        ));
    }
    report(
        2,
        pass && start.elapsed().as_secs_f64() < 5.0,
        start,
        details.join("; "),
    );
}

#[test]
fn criterion_03_homogenization_reference() {
    let start = Instant::now();
    let mut worst_1d: f64 = 0.0;
    for name in [
        "periodic-1d",
        "locally-periodic-1d",
        "locally-periodic-1d-zero-phase",
    ] {
        let f = CoefficientField::catalog(name).unwrap();
        for x in [0.0, 0.3, 0.75] {
            let t = homogenized_tensor(&f, &[x], 1024).unwrap();
            let oracle = harmonic_mean(|y| f.eval_scalar(&[x], &[y]), 100_000);
            worst_1d = worst_1d.max((t.a0[0][0] - oracle).abs());
        }
    }
    let f = CoefficientField::catalog("periodic-2d").unwrap();
    let t = homogenized_tensor(&f, &[0.0, 0.0], 128).unwrap();
    let a1 = |y: f64| 1.5 + (2.0 * PI * y).sin();
    let (h, m) = (harmonic_mean(a1, 100_000), arithmetic_mean(a1, 100_000));
    let err_2d = (t.a0[0][0] - h * m)
        .abs()
        .max((t.a0[1][1] - m * h).abs())
        .max(t.a0[0][1].abs())
        .max(t.a0[1][0].abs());

    let mut bounds_ok = true;
    for name in CATALOG {
        let f = CoefficientField::catalog(name).unwrap();
        let d = f.dim();
        let n = if d == 1 { 256 } else { 64 };
        let xs: Vec<Vec<f64>> = if d == 1 {
            vec![vec![0.0], vec![0.4]]
        } else {
            vec![vec![0.0, 0.0], vec![0.2, 0.35]]
        };
        for x in xs {
            let t = homogenized_tensor(&f, &x, n).unwrap();
            let m: usize = 400;
            let samples: Vec<f64> = (0..m.pow(d as u32))
                .map(|i| {
                    let y: Vec<f64> = (0..d)
                        .map(|j| ((i / m.pow(j as u32)) % m) as f64 / m as f64 + 0.5 / m as f64)
                        .collect();
                    f.eval_scalar(&x, &y)
                })
                .collect();
            let voigt = samples.iter().sum::<f64>() / samples.len() as f64;
            let reuss = samples.len() as f64 / samples.iter().map(|a| 1.0 / a).sum::<f64>();
            let (lo, hi) = eigen_range(&t.a0, d);
            bounds_ok &= lo >= reuss * (1.0 - 1e-6) && hi <= voigt * (1.0 + 1e-6);
        }
    }
    report(
        3,
        worst_1d < 1e-6 && err_2d < 1e-4 && bounds_ok && start.elapsed().as_secs_f64() < 30.0,
        start,
        format!("1D harmonic-mean error {worst_1d:.2e}, 2D separable error {err_2d:.2e}, Voigt-Reuss {bounds_ok}"),
    );
}

#[test]
fn criterion_04_upscaling_error_1d() {
    let start = Instant::now();
    let base = ConvergenceConfig {
        eta: 0.01,
        q: 6,
        k_range: Some([1, 6]),
        ..ConvergenceConfig::default()
    };
    let periodic = run_convergence(&ConvergenceConfig {
        coefficients: vec!["periodic-1d".into()],
        sweep_var: SweepVar::Ratio,
        ..base.clone()
    })
    .unwrap()
    .remove(0);
    let local = run_convergence(&ConvergenceConfig {
        coefficients: vec!["locally-periodic-1d".into()],
        sweep_var: SweepVar::Eps,
        fit_tail: Some(3),
        ..base
    })
    .unwrap()
    .remove(0);
    let ps = periodic.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let ls = local.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    report(
        4,
        ps >= 7.5 && (ls - 2.0).abs() <= 0.4,
        start,
        format!(
            "periodic slope {ps:.2} (errors {}); locally periodic tail slope {ls:.2} (errors {})",
            sci(&periodic.errors()),
            sci(&local.errors())
        ),
    );
}

#[test]
fn criterion_05_upscaling_error_2d() {
    let start = Instant::now();
    let base = ConvergenceConfig {
        eta: 0.1,
        q: 6,
        k_range: Some([2, 5]),
        pts_per_eps: 16,
        sweep_var: SweepVar::Eps,
        ..ConvergenceConfig::default()
    };
    let series = run_convergence(&ConvergenceConfig {
        coefficients: vec!["periodic-2d".into(), "locally-periodic-2d".into()],
        ..base
    })
    .unwrap();
    let (periodic, local) = (&series[0], &series[1]);
    // Points below the floor are excluded; fewer than three left means the
    // periodic series sits at the floor, which the criterion permits.
    let ps = periodic.fit.map(|f| f.slope);
    let ls = local.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    report(
        5,
        ps.is_none_or(|s| s >= 7.0) && (ls - 1.0).abs() <= 0.4,
        start,
        format!(
            "periodic slope {ps:.2?} (errors {}); locally periodic slope {ls:.2} (errors {})",
            sci(&periodic.errors()),
            sci(&local.errors())
        ),
    );
}

#[test]
fn criterion_06_expansion_errors() {
    let start = Instant::now();
    let cfg = ExpansionConfig {
        coefficient: "locally-periodic-1d".into(),
        half_width: Some(3),
        t_final: Some(1.0),
        window: 1.5,
        orders: 3,
        ..ExpansionConfig::default()
    };
    let out = run_expansion(&cfg, ExpansionExperiment::Fig2).unwrap();
    let slopes: Vec<f64> = out
        .series
        .iter()
        .map(|s| s.fit.map(|f| f.slope).unwrap_or(f64::NAN))
        .collect();
    let pass = (0..3).all(|m| (slopes[m] - (m as f64 + 1.0)).abs() <= 0.4);
    report(
        6,
        pass && start.elapsed().as_secs_f64() < 600.0,
        start,
        format!("slopes E0..E3 {slopes:.3?} (E3 informational)"),
    );
}

#[test]
fn criterion_07_quasi_polynomial_closure() {
    let start = Instant::now();
    let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
    let setup = ExpansionSetup::new(field, vec![1.0], 30, 1.0);
    let (_, rep) = quasi_poly_decompose(&setup, 15.0).unwrap();
    let terms = solve_hierarchy(&setup, 2).unwrap();
    let last = terms[1].levels.len() - 1;
    let g1 = growth_exponent(&setup, &terms[1], last, (5.0, 15.0))
        .unwrap()
        .slope;
    let g2 = growth_exponent(&setup, &terms[2], last, (5.0, 15.0))
        .unwrap()
        .slope;
    report(
        7,
        rep.relative_difference < 1e-3 && (g1 - 1.0).abs() <= 0.3 && (g2 - 2.0).abs() <= 0.3,
        start,
        format!(
            "reconstruction {:.2e}, growth v1 {g1:.3}, v2 {g2:.3}, max cell mean {:.1e}, g/(1+t^3) {:.2}",
            rep.relative_difference, rep.max_mean, rep.g_cubic_bound
        ),
    );
}

#[test]
fn criterion_08_time_average_residuals() {
    let start = Instant::now();
    let cfg = ExpansionConfig {
        coefficient: "locally-periodic-1d".into(),
        cell_n: 32,
        q: 6,
        ..ExpansionConfig::default()
    };
    let out = run_expansion(&cfg, ExpansionExperiment::TimeAverages).unwrap();
    let slope = |label: &str| {
        out.series(label)
            .and_then(|s| s.fit)
            .map(|f| f.slope)
            .unwrap_or(f64::NAN)
    };
    let (r00, corr) = (slope("r00"), slope("corrector"));
    report(
        8,
        r00 >= 5.5 && corr >= 5.5,
        start,
        format!(
            "r00 slope {r00:.2}, corrector slope {corr:.2}, r11 slope {:.2}, r10 slope {:.2}",
            slope("r11"),
            slope("r10")
        ),
    );
}

#[test]
fn criterion_09_flux_decomposition() {
    let start = Instant::now();
    let cfg = ExpansionConfig {
        coefficient: "locally-periodic-1d".into(),
        eta: 1e-3,
        q: 6,
        floor: 1e-14,
        ..ExpansionConfig::default()
    };
    let out = run_expansion(&cfg, ExpansionExperiment::FluxDecomp).unwrap();
    let f0 = out.series("f0").unwrap();
    let f1 = out.series("f1").unwrap();
    let s0 = f0.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let s1 = f1.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    report(
        9,
        s0 >= 5.5 && s1 >= 4.5,
        start,
        format!(
            "|F0 - A0 s| slope {s0:.2} ({}); |F1| slope {s1:.2} ({})",
            sci(&f0.errors()),
            sci(&f1.errors())
        ),
    );
}

#[test]
fn criterion_10_macro_solver() {
    let start = Instant::now();
    let mms = MacroRunConfig {
        coefficient: "periodic-1d".into(),
        problem: MacroProblemKind::Manufactured,
        mode: FluxModeKind::Reference,
        cell_n: 256,
        t_final: 1.0,
        ..MacroRunConfig::default()
    };
    let series = macro_convergence(&mms, &[16, 32, 64, 128]).unwrap();
    let order = fit_rate(&series.records, 0.0).unwrap().slope;

    let standing = MacroRunConfig {
        coefficient: "constant".into(),
        problem: MacroProblemKind::StandingWave,
        cells: 32,
        t_final: 0.5,
        ..MacroRunConfig::default()
    };
    let reference = run_macro_config(&standing).unwrap();
    let hmm = run_macro_config(&MacroRunConfig {
        mode: FluxModeKind::Hmm,
        eps: 0.01,
        eta: 0.05,
        pts_per_eps: 32,
        ..standing
    })
    .unwrap();
    let g = reference.trajectory.grid;
    let diff: Vec<f64> = reference
        .trajectory
        .final_field()
        .iter()
        .zip(hmm.trajectory.final_field())
        .map(|(a, b)| a - b)
        .collect();
    let gap = g.l2_norm(&diff);
    report(
        10,
        (order - 2.0).abs() <= 0.2 && gap < 1e-8 && start.elapsed().as_secs_f64() < 120.0,
        start,
        format!(
            "manufactured order {order:.3} (errors {}); hmm vs reference L2 gap {gap:.1e}",
            sci(&series.errors())
        ),
    );
}
