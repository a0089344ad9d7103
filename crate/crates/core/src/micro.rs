//! Micro wave problems on a periodic box around a macro point.
//!
//! The solver evolves the periodic deviation `w = u - s·x` of the micro field
//! with leap-frog on a node grid `x_i = i Δx`, `i = -M..M-1`, where `Δx` is
//! `ε / pts_per_eps`. Fluxes live on edges, so the averaged flux is a
//! weighted sum of `a_e (δw/Δx + s)` with the space kernel evaluated at edge
//! midpoints and the time kernel at the time levels. Only `t >= 0` is
//! simulated; negative times are covered by symmetry.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::grid::{leapfrog_step, time_steps, DivForm, PeriodicGrid};
use crate::kernels::Kernel;
use crate::media::CoefficientField;
use crate::sum::CompensatedSum;

#[derive(Debug, Clone)]
pub struct MicroProblem {
    pub field: CoefficientField,
    pub r0: Vec<f64>,
    pub slope: Vec<f64>,
    pub eps: f64,
    pub eta: f64,
    pub tau: f64,
    /// Box half-width `L_η`; the smallest admissible value when `None`.
    pub half_width: Option<f64>,
    pub pts_per_eps: usize,
    pub cfl: f64,
}

impl MicroProblem {
    /// Problem with `τ = η`, 32 points per `ε` and CFL number 0.5.
    pub fn new(field: CoefficientField, r0: Vec<f64>, slope: Vec<f64>, eps: f64, eta: f64) -> Self {
        MicroProblem {
            field,
            r0,
            slope,
            eps,
            eta,
            tau: eta,
            half_width: None,
            pts_per_eps: 32,
            cfl: 0.5,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_pts_per_eps(mut self, n: usize) -> Self {
        self.pts_per_eps = n;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_half_width(mut self, l: f64) -> Self {
        self.half_width = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// `η/2 + (τ/2) √c2`.
    pub fn required_half_width(&self) -> f64 {
        0.5 * self.eta + 0.5 * self.tau * self.field.c2().sqrt()
    }

    /// Fractional part of `r0 / ε`, the cell offset of node 0.
    pub fn phase(&self) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (j, x) in self.r0.iter().enumerate() {
            let v = x / self.eps;
            g[j] = v - v.floor();
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.r0.len() != d || self.slope.len() != d {
            return Err(invalid(format!("r0 and slope must have {d} components")));
        }
        if !(self.eps > 0.0 && self.eta > 0.0 && self.tau > 0.0) {
            return Err(invalid("eps, eta and tau must be positive"));
        }
        if self.eps > self.eta * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "need eps <= eta, got eps={}, eta={}",
                self.eps, self.eta
            )));
        }
        if self.pts_per_eps < 16 {
            return Err(invalid(format!(
                "pts_per_eps must be >= 16, got {}",
                self.pts_per_eps
            )));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(invalid(format!("cfl must lie in (0, 1), got {}", self.cfl)));
        }
        if self.cfl >= 1.0 / (d as f64).sqrt() {
            let dx = self.eps / self.pts_per_eps as f64;
            return Err(Error::Cfl {
                dt: self.cfl * dx / self.field.c2().sqrt(),
                bound: dx / (d as f64 * self.field.c2()).sqrt(),
            });
        }
        if let Some(l) = self.half_width {
            let req = self.required_half_width();
            if l < req {
                return Err(Error::BoxTooSmall {
                    half_width: l,
                    required: req,
                });
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<MicroGeometry> {
        self.validate()?;
        let p = self.pts_per_eps;
        let dx = self.eps / p as f64;
        let want = self
            .half_width
            .unwrap_or_else(|| self.required_half_width());
        // one extra fast period of margin, rounded to whole periods
        let m_min = (want / dx).ceil() as usize + p;
        let half_nodes = m_min.div_ceil(p) * p;
        let horizon = 0.5 * self.tau;
        let n_steps = time_steps(
            horizon / self.eps,
            1.0 / p as f64,
            self.cfl,
            self.field.c2(),
        );
        let dt = horizon / n_steps as f64;
        Ok(MicroGeometry {
            dim: self.dim(),
            dx,
            dt,
            n_steps,
            half_nodes,
            phase: self.phase(),
            pts_per_eps: p,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroGeometry {
    pub dim: usize,
    pub dx: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// `M`: nodes run from `-M` to `M - 1` per axis.
    pub half_nodes: usize,
    pub phase: [f64; 2],
    pub pts_per_eps: usize,
}

impl MicroGeometry {
    pub fn nodes_per_axis(&self) -> usize {
        2 * self.half_nodes
    }

    pub fn half_width(&self) -> f64 {
        self.half_nodes as f64 * self.dx
    }

    /// Signed node number along an axis for array position `a`.
    #[inline]
    pub fn node(&self, a: usize) -> i64 {
        a as i64 - self.half_nodes as i64
    }

    /// Fast coordinate of node `i` (plus `shift` cells), reduced to the cell.
    #[inline]
    pub fn fast(&self, axis: usize, i: i64, shift: f64) -> f64 {
        let p = self.pts_per_eps as i64;
        self.phase[axis] + (i.rem_euclid(p) as f64 + shift) / p as f64
    }

    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid::new(self.dim, self.nodes_per_axis(), self.dx).expect("valid micro grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Snapshots {
    #[default]
    None,
    Final,
    /// Every `k`-th level, plus the final one.
    Every(usize),
}

#[derive(Debug, Clone, Default)]
pub struct MicroOptions {
    /// Accumulate the averaged flux with this kernel.
    pub kernel: Option<Kernel>,
    pub snapshots: Snapshots,
    pub track_energy: bool,
}

#[derive(Debug, Clone)]
pub struct MicroSolution {
    pub geometry: MicroGeometry,
    pub problem: MicroProblem,
    pub flux: Option<Vec<f64>>,
    /// `(t, u)` with `u = s·x + w` in node order.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Largest energy deviation relative to the energy scale.
    pub energy_drift: Option<f64>,
}

impl MicroSolution {
    /// Re-runs the problem for negative times and returns `max |u(t) - u(-t)|`.
    pub fn check_time_symmetry(&self) -> Result<f64> {
        check_time_symmetry(&self.problem)
    }

    /// Long-format CSV: `t,x[,y],u` per stored level.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.geometry;
        let grid = g.grid();
        let coords = if g.dim == 1 { "x" } else { "x,y" };
        writeln!(out, "t,{coords},u")?;
        for (t, u) in &self.snapshots {
            for (idx, v) in u.iter().enumerate() {
                let m = grid.multi_index(idx);
                let x0 = self.problem.r0[0] + g.node(m[0]) as f64 * g.dx;
                if g.dim == 1 {
                    writeln!(out, "{t:.12e},{x0:.12e},{v:.12e}")?;
                } else {
                    let x1 = self.problem.r0[1] + g.node(m[1]) as f64 * g.dx;
                    writeln!(out, "{t:.12e},{x0:.12e},{x1:.12e},{v:.12e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Operator `div_h(A ∇_h ·)` of the micro box.
pub fn micro_operator(problem: &MicroProblem, g: &MicroGeometry) -> Result<DivForm> {
    let grid = g.grid();
    let d = g.dim;
    let r0 = &problem.r0;
    let slow = |m: [usize; 2], k: Option<usize>| -> [f64; 2] {
        let mut x = [0.0; 2];
        for j in 0..d {
            let half = if Some(j) == k { 0.5 } else { 0.0 };
            x[j] = r0[j] + (g.node(m[j]) as f64 + half) * g.dx;
        }
        x
    };
    let fast = |m: [usize; 2], k: Option<usize>| -> [f64; 2] {
        let mut y = [0.0; 2];
        for j in 0..d {
            let half = if Some(j) == k { 0.5 } else { 0.0 };
            y[j] = g.fast(j, g.node(m[j]), half);
        }
        y
    };
    let edge = (0..d)
        .map(|k| {
            grid.tabulate(|m| {
                problem
                    .field
                    .eval(&slow(m, Some(k))[..d], &fast(m, Some(k))[..d])[k][k]
            })
        })
        .collect();
    let cross = (d == 2).then(|| {
        grid.tabulate(|m| problem.field.eval(&slow(m, None)[..d], &fast(m, None)[..d])[0][1])
    });
    DivForm::new(grid, edge, cross)
}

/// Kernel weights on the box: for flux component `k`, the product of the
/// scaled kernel at edge midpoints along `k` and at nodes along other axes.
pub(crate) struct FluxWeights {
    /// `(array index, weight · Δx^d)` per flux component.
    pub(crate) edge: Vec<Vec<(usize, f64)>>,
    /// Node weights for the cross flux.
    pub(crate) node: Vec<(usize, f64)>,
}

pub(crate) fn flux_weights(
    kernel: &Kernel,
    eta: f64,
    g: &MicroGeometry,
    grid: &PeriodicGrid,
) -> FluxWeights {
    let n = g.nodes_per_axis();
    let h = 0.5 * eta;
    let at_node: Vec<f64> = (0..n)
        .map(|a| kernel.eval_scaled(h, g.node(a) as f64 * g.dx))
        .collect();
    let at_half: Vec<f64> = (0..n)
        .map(|a| kernel.eval_scaled(h, (g.node(a) as f64 + 0.5) * g.dx))
        .collect();
    let vol = g.dx.powi(g.dim as i32);
    let active = |t: &[f64]| -> Vec<usize> { (0..n).filter(|&a| t[a] != 0.0).collect() };
    let (an, ah) = (active(&at_node), active(&at_half));
    let mut edge = Vec::new();
    for k in 0..g.dim {
        let mut list = Vec::new();
        if g.dim == 1 {
            for &a in &ah {
                list.push((a, at_half[a] * vol));
            }
        } else {
            let (l0, l1) = if k == 0 { (&ah, &an) } else { (&an, &ah) };
            let (t0, t1) = if k == 0 {
                (&at_half, &at_node)
            } else {
                (&at_node, &at_half)
            };
            for &b in l1 {
                for &a in l0 {
                    list.push((grid.index([a, b]), t0[a] * t1[b] * vol));
                }
            }
        }
        edge.push(list);
    }
    let mut node = Vec::new();
    if g.dim == 2 {
        for &b in &an {
            for &a in &an {
                node.push((grid.index([a, b]), at_node[a] * at_node[b] * vol));
            }
        }
    }
    FluxWeights { edge, node }
}

/// Space-averaged flux of the current level.
fn averaged_flux(op: &DivForm, w: &[f64], s: &[f64], weights: &FluxWeights) -> Vec<f64> {
    let grid = op.grid();
    let h = grid.h();
    let d = grid.dim();
    let mut out = vec![0.0; d];
    for k in 0..d {
        let a = op.edge(k);
        let mut acc = CompensatedSum::new();
        for &(idx, wt) in &weights.edge[k] {
            let nb = grid.shift(idx, k, true);
            acc.add(wt * a[idx] * ((w[nb] - w[idx]) / h + s[k]));
        }
        if let Some(c) = op.cross() {
            let l = 1 - k;
            for &(idx, wt) in &weights.node {
                let dl = (w[grid.shift(idx, l, true)] - w[grid.shift(idx, l, false)]) / (2.0 * h);
                acc.add(wt * c[idx] * (dl + s[l]));
            }
        }
        out[k] = acc.value();
    }
    out
}

fn full_field(g: &MicroGeometry, grid: &PeriodicGrid, s: &[f64], w: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|idx| {
            let m = grid.multi_index(idx);
            let lin: f64 = (0..g.dim).map(|j| s[j] * g.node(m[j]) as f64 * g.dx).sum();
            lin + w[idx]
        })
        .collect()
}

pub fn solve_micro(problem: &MicroProblem, opts: &MicroOptions) -> Result<MicroSolution> {
    let g = problem.geometry()?;
    let op = micro_operator(problem, &g)?;
    let grid = *op.grid();
    let n = grid.len();
    let s = &problem.slope;
    let dt = g.dt;
    let dt2 = dt * dt;
    log::debug!(
        "micro solve: {} nodes, {} steps, dx={:e}, dt={:e}",
        n,
        g.n_steps,
        g.dx,
        dt
    );

    let weights = opts
        .kernel
        .as_ref()
        .map(|k| flux_weights(k, problem.eta, &g, &grid));
    let time_weight = |level: usize| -> f64 {
        let k = opts.kernel.as_ref().expect("kernel present");
        let t = level as f64 * dt;
        let w = if level == 0 { dt } else { 2.0 * dt };
        w * k.eval_scaled(0.5 * problem.tau, t)
    };
    let mut flux_acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); g.dim];

    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut snapshots = Vec::new();
    let keep = |level: usize| -> bool {
        match opts.snapshots {
            Snapshots::None => false,
            Snapshots::Final => level == g.n_steps,
            Snapshots::Every(k) => level == g.n_steps || (k > 0 && level.is_multiple_of(k)),
        }
    };
    let record = |level: usize,
                  w: &[f64],
                  acc: &mut Vec<CompensatedSum>,
                  snaps: &mut Vec<(f64, Vec<f64>)>| {
        if let Some(wts) = &weights {
            let tw = time_weight(level);
            if tw != 0.0 {
                let f = averaged_flux(&op, w, s, wts);
                for (a, v) in acc.iter_mut().zip(f) {
                    a.add(tw * v);
                }
            }
        }
        if keep(level) {
            snaps.push((level as f64 * dt, full_field(&g, &grid, s, w)));
        }
    };

    // level 0: w = 0
    record(0, &cur, &mut flux_acc, &mut snapshots);
    // level 1: w¹ = w⁰ + dt²/2 L_s w⁰
    op.apply(&cur, s, &mut scratch);
    for i in 0..n {
        next[i] = cur[i] + 0.5 * dt2 * scratch[i];
    }
    std::mem::swap(&mut prev, &mut cur);
    std::mem::swap(&mut cur, &mut next);
    record(1, &cur, &mut flux_acc, &mut snapshots);

    let forcing = opts.track_energy.then(|| {
        let zero = vec![0.0; n];
        let mut f = vec![0.0; n];
        op.apply(&zero, s, &mut f);
        f
    });
    let mut energy = EnergyMonitor::default();

    for level in 2..=g.n_steps {
        leapfrog_step(&op, &prev, &cur, &mut next, dt2, s, None, &mut scratch);
        if let Some(f) = &forcing {
            // scratch = L_s cur, so L_0 cur = scratch - f
            energy.observe(&op, &prev, &cur, &scratch, f, dt);
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        record(level, &cur, &mut flux_acc, &mut snapshots);
    }

    Ok(MicroSolution {
        geometry: g,
        problem: problem.clone(),
        flux: weights.map(|_| flux_acc.iter().map(|a| a.value()).collect()),
        snapshots,
        energy_drift: forcing.map(|_| energy.drift()),
    })
}

/// Tracks `E^{n+1/2} = ½|δ_t w|² - ½⟨L_0 w^{n+1}, w^n⟩ - ½⟨f, w^{n+1} + w^n⟩`,
/// which leap-frog conserves exactly.
#[derive(Default)]
struct EnergyMonitor {
    first: Option<f64>,
    worst: f64,
    scale: f64,
}

impl EnergyMonitor {
    fn observe(
        &mut self,
        op: &DivForm,
        prev: &[f64],
        cur: &[f64],
        ls_cur: &[f64],
        f: &[f64],
        dt: f64,
    ) {
        let n = cur.len();
        let vel: Vec<f64> = (0..n).map(|i| (cur[i] - prev[i]) / dt).collect();
        let l0: Vec<f64> = (0..n).map(|i| ls_cur[i] - f[i]).collect();
        let sum: Vec<f64> = (0..n).map(|i| cur[i] + prev[i]).collect();
        let kinetic = 0.5 * op.inner(&vel, &vel);
        let potential = -0.5 * op.inner(&l0, prev);
        let work = -0.5 * op.inner(f, &sum);
        let e = kinetic + potential + work;
        self.scale = self.scale.max(kinetic.abs() + potential.abs() + work.abs());
        match self.first {
            None => self.first = Some(e),
            Some(e0) => self.worst = self.worst.max((e - e0).abs()),
        }
    }

    fn drift(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.worst / self.scale
        }
    }
}

/// Simulates both time directions from the same initial data and returns
/// `max_n max_x |u(t_n) - u(-t_n)|`.
pub fn check_time_symmetry(problem: &MicroProblem) -> Result<f64> {
    let g = problem.geometry()?;
    let op = micro_operator(problem, &g)?;
    let n = op.grid().len();
    let s = &problem.slope;
    let dt2 = g.dt * g.dt;
    let w0 = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    op.apply(&w0, s, &mut scratch);
    let fwd1: Vec<f64> = (0..n).map(|i| w0[i] + 0.5 * dt2 * scratch[i]).collect();
    // backward branch: w^{-1} = 2 w^0 - w^1 + dt² L_s w^0
    let bwd1: Vec<f64> = (0..n)
        .map(|i| 2.0 * w0[i] - fwd1[i] + dt2 * scratch[i])
        .collect();
    let mut worst = max_diff(&fwd1, &bwd1);
    let (mut fp, mut fc) = (w0.clone(), fwd1);
    let (mut bp, mut bc) = (w0, bwd1);
    let mut next = vec![0.0; n];
    for _ in 2..=g.n_steps {
        leapfrog_step(&op, &fp, &fc, &mut next, dt2, s, None, &mut scratch);
        std::mem::swap(&mut fp, &mut fc);
        std::mem::swap(&mut fc, &mut next);
        leapfrog_step(&op, &bp, &bc, &mut next, dt2, s, None, &mut scratch);
        std::mem::swap(&mut bp, &mut bc);
        std::mem::swap(&mut bc, &mut next);
        worst = worst.max(max_diff(&fc, &bc));
    }
    Ok(worst)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upscale::hmm_flux;

    #[test]
    fn linear_data_is_steady_in_constant_medium() {
        let field = CoefficientField::constant(2, 1.3).unwrap();
        let p = MicroProblem::new(field, vec![0.0, 0.0], vec![0.7, -0.4], 0.05, 0.1)
            .with_pts_per_eps(16);
        let opts = MicroOptions {
            snapshots: Snapshots::Final,
            ..MicroOptions::default()
        };
        let sol = solve_micro(&p, &opts).unwrap();
        let g = sol.geometry;
        let grid = g.grid();
        let (_, u) = &sol.snapshots[0];
        for (idx, v) in u.iter().enumerate() {
            let m = grid.multi_index(idx);
            let exact = 0.7 * g.node(m[0]) as f64 * g.dx - 0.4 * g.node(m[1]) as f64 * g.dx;
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn initial_level_is_the_linear_data() {
        let field = CoefficientField::catalog("periodic-1d").unwrap();
        let p = MicroProblem::new(field, vec![0.1], vec![2.0], 0.005, 0.01);
        let sol = solve_micro(
            &p,
            &MicroOptions {
                snapshots: Snapshots::Every(1),
                ..MicroOptions::default()
            },
        )
        .unwrap();
        let (t0, u0) = &sol.snapshots[0];
        assert_eq!(*t0, 0.0);
        for (a, v) in u0.iter().enumerate() {
            assert_eq!(*v, 2.0 * sol.geometry.node(a) as f64 * sol.geometry.dx);
        }
        assert_eq!(sol.snapshots.len(), sol.geometry.n_steps + 1);
    }

    #[test]
    fn box_and_steps_satisfy_constraints() {
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let p = MicroProblem::new(field.clone(), vec![0.0], vec![1.0], 0.001, 0.01);
        let g = p.geometry().unwrap();
        assert!(g.half_width() >= p.required_half_width() + p.eps * 0.999);
        assert_eq!(g.half_nodes % p.pts_per_eps, 0);
        assert!(g.dt <= p.cfl * g.dx / field.c2().sqrt() * (1.0 + 1e-12));
        assert!((g.dt * g.n_steps as f64 - 0.5 * p.tau).abs() < 1e-15);

        let small = p.clone().with_half_width(0.001);
        assert!(matches!(small.geometry(), Err(Error::BoxTooSmall { .. })));
        let fast = p.clone().with_cfl(0.99).with_pts_per_eps(16);
        assert!(fast.geometry().is_ok());
        let field2 = CoefficientField::catalog("periodic-2d").unwrap();
        let unstable =
            MicroProblem::new(field2, vec![0.0, 0.0], vec![1.0, 0.0], 0.05, 0.1).with_cfl(0.8);
        assert!(matches!(unstable.geometry(), Err(Error::Cfl { .. })));
    }

    #[test]
    fn energy_is_conserved() {
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let p = MicroProblem::new(field, vec![0.1], vec![1.0], 0.0025, 0.01).with_cfl(0.9);
        let sol = solve_micro(
            &p,
            &MicroOptions {
                track_energy: true,
                ..MicroOptions::default()
            },
        )
        .unwrap();
        let drift = sol.energy_drift.unwrap();
        assert!(drift < 1e-10, "{drift}");
    }

    #[test]
    fn time_reversal_is_exact_up_to_rounding() {
        let field = CoefficientField::catalog("periodic-1d").unwrap();
        let p = MicroProblem::new(field, vec![0.0], vec![1.0], 0.005, 0.01).with_pts_per_eps(16);
        assert!(check_time_symmetry(&p).unwrap() <= 1e-12);
        let field = CoefficientField::catalog("locally-periodic-2d").unwrap();
        let p = MicroProblem::new(field, vec![0.1, 0.2], vec![1.0, 0.5], 0.05, 0.1)
            .with_pts_per_eps(16);
        assert!(check_time_symmetry(&p).unwrap() <= 1e-12);
        let field = CoefficientField::constant(1, 2.0).unwrap();
        let p = MicroProblem::new(field, vec![0.0], vec![1.0], 0.005, 0.01);
        assert_eq!(check_time_symmetry(&p).unwrap(), 0.0);
    }

    #[test]
    fn boundary_margin_does_not_change_the_flux() {
        let k = Kernel::new(3, 6).unwrap();
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let p = MicroProblem::new(field, vec![0.1], vec![1.0], 0.0025, 0.01);
        let a = hmm_flux(&p, &k).unwrap().value[0];
        let wide = p.clone().with_half_width(2.0 * p.required_half_width());
        let b = hmm_flux(&wide, &k).unwrap().value[0];
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let field = CoefficientField::constant(1, 1.0).unwrap();
        let p = MicroProblem::new(field, vec![0.0], vec![1.0], 0.01, 0.01).with_pts_per_eps(16);
        let sol = solve_micro(
            &p,
            &MicroOptions {
                snapshots: Snapshots::Final,
                ..MicroOptions::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,u\n"));
        assert_eq!(text.lines().count(), 1 + sol.geometry.nodes_per_axis());
    }
}
