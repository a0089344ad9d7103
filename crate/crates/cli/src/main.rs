use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdhmm::harness::{
    run_convergence, run_expansion, run_macro_config, ExpansionExperiment, ExperimentConfig, Series,
};
use fdhmm::homog::{solve_cell_with, CellOptions};
use fdhmm::micro::Snapshots;
use fdhmm::upscale::{exact_reference, matched_reference};
use fdhmm::{
    hmm_flux, solve_micro, upscaling_error, CoefficientField, Kernel, MicroOptions, MicroProblem,
};

type CliResult = Result<(), Box<dyn std::error::Error>>;

/// Finite-difference HMM for the wave equation in locally periodic media.
///
/// Config files are TOML with optional [convergence], [macro] and
/// [expansion] sections; every key has a default (see README).
#[derive(Debug, Parser)]
#[command(name = "fdhmm", version)]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reserved; the pipeline is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Averaging-kernel diagnostics.
    Kernel {
        #[command(subcommand)]
        action: KernelAction,
    },
    /// Solve the periodic cell problems and print the homogenized tensor.
    CellSolve {
        /// Catalog coefficient label.
        #[arg(long)]
        coeff: String,
        /// Slow point, one value per dimension.
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        x: Vec<f64>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Write the correctors as CSV.
        #[arg(long)]
        corrector_csv: Option<PathBuf>,
    },
    /// HMM flux at one point and its error against the homogenized flux.
    Upscale {
        #[arg(long)]
        coeff: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        eta: f64,
        /// Default: eta.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, default_value_t = 6)]
        q: usize,
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        slope: Vec<f64>,
        /// Default: origin.
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        r0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 32)]
        pts_per_eps: usize,
        #[arg(long, default_value_t = 0.5)]
        cfl: f64,
        /// Also compare with a cell problem resolved at this size.
        #[arg(long)]
        reference_n: Option<usize>,
        /// Dump the micro field as CSV.
        #[arg(long)]
        dump_micro: Option<PathBuf>,
        /// Store every k-th micro level in the dump (default: final only).
        #[arg(long)]
        dump_every: Option<usize>,
    },
    /// Run the macro solver from the [macro] section of a config file.
    MacroRun {
        #[arg(long)]
        config: PathBuf,
    },
    /// Asymptotic-expansion experiments from the [expansion] section.
    Expansion {
        /// fig2, fig3, fig4, time-averages or flux-decomp.
        #[arg(long)]
        experiment: ExpansionExperiment,
        #[arg(long)]
        config: PathBuf,
    },
    /// Upscaling-error sweeps from the [convergence] section.
    Convergence {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum KernelAction {
    /// Check moments and boundary smoothness of the (p, q) kernel.
    Check {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Kernel {
            action: KernelAction::Check { p, q },
        } => kernel_check(p, q),
        Command::CellSolve {
            coeff,
            x,
            n,
            corrector_csv,
        } => cell_solve(&coeff, &x, n, corrector_csv.as_deref()),
        Command::Upscale {
            coeff,
            eps,
            eta,
            tau,
            p,
            q,
            slope,
            r0,
            pts_per_eps,
            cfl,
            reference_n,
            dump_micro,
            dump_every,
        } => {
            let field = CoefficientField::catalog(&coeff)?;
            let d = field.dim();
            let problem =
                MicroProblem::new(field, r0.unwrap_or_else(|| vec![0.0; d]), slope, eps, eta)
                    .with_tau(tau.unwrap_or(eta))
                    .with_pts_per_eps(pts_per_eps)
                    .with_cfl(cfl);
            upscale(
                &problem,
                p,
                q,
                reference_n,
                dump_micro.as_deref(),
                dump_every,
            )
        }
        Command::MacroRun { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_macro_config(cfg.macro_run()?)?;
            let t = &out.trajectory;
            println!("nodes {} steps {} dt {:.6e}", t.grid.len(), t.steps, t.dt);
            println!("final time {:.6e}", t.final_time());
            println!("energy drift {:.3e}", t.energy_drift);
            if let Some(e) = out.l2_error {
                println!("l2 error {e:.6e}");
            }
            Ok(())
        }
        Command::Expansion { experiment, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_expansion(cfg.expansion()?, experiment)?;
            print_series(&out.series);
            for (k, v) in &out.summary {
                println!("{k} {v:.6e}");
            }
            Ok(())
        }
        Command::Convergence { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_series(&run_convergence(cfg.convergence()?)?);
            Ok(())
        }
    }
}

fn kernel_check(p: usize, q: usize) -> CliResult {
    let k = Kernel::new(p, q)?;
    println!("kernel p={p} q={q}");
    println!("coefficients {:?}", k.coeffs());
    let mass = (k.moment_exact(0) - 1.0).abs();
    let moments = (1..=p).map(|r| k.moment_exact(r).abs()).fold(0.0, f64::max);
    let boundary = (0..=q)
        .flat_map(|o| [k.derivative(o, -1.0), k.derivative(o, 1.0)])
        .map(f64::abs)
        .fold(0.0, f64::max);
    println!("mass defect {mass:.3e}");
    println!("max moment 1..={p} {moments:.3e}");
    println!("max boundary derivative 0..={q} {boundary:.3e}");
    if mass.max(moments) < 1e-12 && boundary < 1e-10 {
        println!("ok");
        Ok(())
    } else {
        Err("kernel check failed".into())
    }
}

fn cell_solve(coeff: &str, x: &[f64], n: usize, csv: Option<&Path>) -> CliResult {
    let field = CoefficientField::catalog(coeff)?;
    let x = if x.is_empty() {
        vec![0.0; field.dim()]
    } else {
        x.to_vec()
    };
    let sol = solve_cell_with(&field, &x, n, CellOptions::default())?;
    let d = sol.dim;
    let grid = sol.grid();
    for k in 0..d {
        let row: Vec<String> = (0..d).map(|l| format!("{:.12e}", sol.a0[k][l])).collect();
        println!("A0[{k}] {}", row.join(" "));
    }
    for (l, c) in sol.correctors.iter().enumerate() {
        println!(
            "corrector {l}: l2 {:.6e} h1 {:.6e}",
            grid.l2_norm(c),
            grid.h1_norm(c)
        );
    }
    println!(
        "iterations {} residual {:.3e}",
        sol.iterations, sol.residual
    );
    if let Some(path) = csv {
        let mut w = BufWriter::new(File::create(path)?);
        let coords = if d == 1 { "y" } else { "y1,y2" };
        let chis: Vec<String> = (0..d).map(|l| format!("chi{l}")).collect();
        writeln!(w, "{coords},{}", chis.join(","))?;
        for idx in 0..grid.len() {
            let m = grid.multi_index(idx);
            let mut row: Vec<String> = (0..d)
                .map(|j| format!("{:.12e}", m[j] as f64 / n as f64))
                .collect();
            row.extend(sol.correctors.iter().map(|c| format!("{:.12e}", c[idx])));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn upscale(
    problem: &MicroProblem,
    p: usize,
    q: usize,
    reference_n: Option<usize>,
    dump: Option<&Path>,
    dump_every: Option<usize>,
) -> CliResult {
    let kernel = Kernel::new(p, q)?;
    let flux = hmm_flux(problem, &kernel)?;
    println!("flux {}", fmt_vec(&flux.value));
    let matched = matched_reference(problem)?;
    println!("reference flux {}", fmt_vec(&matched.value));
    println!("error {:.6e}", upscaling_error(&flux, &matched)?);
    if let Some(n) = reference_n {
        let resolved = exact_reference(problem, n)?;
        println!("resolved flux {}", fmt_vec(&resolved.value));
        println!("resolved error {:.6e}", upscaling_error(&flux, &resolved)?);
    }
    if let Some(path) = dump {
        let opts = MicroOptions {
            snapshots: dump_every.map_or(Snapshots::Final, Snapshots::Every),
            ..MicroOptions::default()
        };
        let sol = solve_micro(problem, &opts)?;
        sol.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.12e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_series(series: &[Series]) {
    for s in series {
        match &s.fit {
            Some(f) => println!(
                "{}: slope {:.4} over {} points (residual {:.3}{})",
                s.label,
                f.slope,
                f.points,
                f.residual,
                if f.noisy { ", noisy" } else { "" }
            ),
            None => println!("{}: no slope", s.label),
        }
        for r in &s.records {
            println!("  {:.6e} {:.6e}", r.sweep_var, r.error);
        }
    }
}
