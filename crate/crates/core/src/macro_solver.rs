//! Macro leap-frog scheme on a coarse Dirichlet grid with fluxes from
//! micro upscaling or from the homogenized tensor.
//!
//! Both flux modes are linear in the local slope, so each edge carries a
//! `d×d` effective matrix computed once: columns come from unit-slope micro
//! solves in HMM mode and from the cell problem in reference mode.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::homog::{homogenized_tensor_with, CellOptions};
use crate::kernels::Kernel;
use crate::media::{CoefficientField, Mat};
use crate::micro::MicroProblem;
use crate::sum::CompensatedSum;
use crate::upscale::hmm_flux;

pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum FluxMode {
    /// `A⁰(x) s` from a cell problem with `n` points per axis.
    Reference { n: usize },
    Hmm {
        eps: f64,
        eta: f64,
        tau: f64,
        p: usize,
        q: usize,
        pts_per_eps: usize,
    },
}

#[derive(Clone)]
pub struct MacroConfig {
    pub field: CoefficientField,
    /// `[a, b]` per axis; the grid spacing is shared.
    pub domain: Vec<(f64, f64)>,
    /// Number of cells along each axis.
    pub cells: usize,
    pub t_final: f64,
    pub cfl: f64,
    /// Overrides the CFL-derived step when set.
    pub dt: Option<f64>,
    pub source: Option<SourceFn>,
    pub initial: SpaceFn,
    pub velocity: Option<SpaceFn>,
    pub flux_mode: FluxMode,
    /// Store every `k`-th level; the final level is always stored.
    pub snapshot_every: Option<usize>,
}

impl fmt::Debug for MacroConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MacroConfig")
            .field("field", &self.field.label())
            .field("domain", &self.domain)
            .field("cells", &self.cells)
            .field("t_final", &self.t_final)
            .field("cfl", &self.cfl)
            .field("dt", &self.dt)
            .field("flux_mode", &self.flux_mode)
            .finish_non_exhaustive()
    }
}

impl MacroConfig {
    /// Unit interval or square, CFL 0.5, zero source and velocity.
    pub fn new(
        field: CoefficientField,
        cells: usize,
        t_final: f64,
        initial: SpaceFn,
        flux_mode: FluxMode,
    ) -> Self {
        let d = field.dim();
        MacroConfig {
            field,
            domain: vec![(0.0, 1.0); d],
            cells,
            t_final,
            cfl: 0.5,
            dt: None,
            source: None,
            initial,
            velocity: None,
            flux_mode,
            snapshot_every: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.domain.len() != d {
            return Err(invalid(format!("domain needs {d} intervals")));
        }
        if self.cells < 2 {
            return Err(invalid("need at least 2 cells"));
        }
        let h = self.spacing();
        for (j, &(a, b)) in self.domain.iter().enumerate() {
            if b <= a {
                return Err(invalid(format!("empty interval on axis {j}")));
            }
            if ((b - a) / self.cells as f64 - h).abs() > 1e-12 * h {
                return Err(invalid("all axes must share the grid spacing"));
            }
        }
        if !(self.t_final >= 0.0) {
            return Err(invalid("t_final must be nonnegative"));
        }
        if !(self.cfl > 0.0) {
            return Err(invalid("cfl must be positive"));
        }
        let bound = h / (d as f64 * self.field.c2()).sqrt();
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || dt > bound {
                return Err(Error::Cfl { dt, bound });
            }
        } else if self.cfl * h / self.field.c2().sqrt() > bound {
            return Err(Error::Cfl {
                dt: self.cfl * h / self.field.c2().sqrt(),
                bound,
            });
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        let (a, b) = self.domain[0];
        (b - a) / self.cells as f64
    }

    /// Number of steps and the step actually used so that `n dt = T`.
    pub fn steps(&self) -> (usize, f64) {
        if self.t_final == 0.0 {
            return (0, 0.0);
        }
        let target = self
            .dt
            .unwrap_or(self.cfl * self.spacing() / self.field.c2().sqrt());
        let n = (self.t_final / target * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }
}

/// Node layout of the macro grid: `(cells + 1)^d` nodes, boundary included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroGrid {
    pub dim: usize,
    pub cells: usize,
    pub h: f64,
    pub origin: [f64; 2],
}

impl MacroGrid {
    pub fn from_config(cfg: &MacroConfig) -> Self {
        let mut origin = [0.0; 2];
        for (j, &(a, _)) in cfg.domain.iter().enumerate() {
            origin[j] = a;
        }
        MacroGrid {
            dim: cfg.dim(),
            cells: cfg.cells,
            h: cfg.spacing(),
            origin,
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn len(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: [usize; 2]) -> usize {
        if self.dim == 1 {
            i[0]
        } else {
            i[1] * self.nodes_per_axis() + i[0]
        }
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n = self.nodes_per_axis();
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % n, idx / n]
        }
    }

    pub fn coords(&self, i: [usize; 2]) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.origin[j] + i[j] as f64 * self.h)
            .collect()
    }

    pub fn is_boundary(&self, i: [usize; 2]) -> bool {
        (0..self.dim).any(|j| i[j] == 0 || i[j] == self.cells)
    }

    /// Samples `f` at the nodes, with zeros on the boundary.
    pub fn sample(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|idx| {
                let m = self.multi_index(idx);
                if self.is_boundary(m) {
                    0.0
                } else {
                    f(&self.coords(m))
                }
            })
            .collect()
    }

    /// `(H^d Σ u²)^{1/2}` over the nodes.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        let s: CompensatedSum = u.iter().map(|v| v * v).collect();
        (s.value() * self.h.powi(self.dim as i32)).sqrt()
    }

    /// Edges normal to `axis` whose two neighbours include an interior node:
    /// the low-side node index of each edge.
    pub fn edges(&self, axis: usize) -> Vec<[usize; 2]> {
        let n = self.cells;
        if self.dim == 1 {
            return (0..n).map(|i| [i, 0]).collect();
        }
        let mut out = Vec::new();
        for j in 1..n {
            for i in 0..n {
                out.push(if axis == 0 { [i, j] } else { [j, i] });
            }
        }
        out
    }

    pub fn edge_midpoint(&self, axis: usize, low: [usize; 2]) -> Vec<f64> {
        let mut x = self.coords(low);
        x[axis] += 0.5 * self.h;
        x
    }
}

/// Least-squares gradient weights for the 6-point stencil of an axis-0 edge:
/// nodes `(0, k)` and `(1, k)`, `k = -1, 0, 1`, relative to the edge.
fn plane_fit_weights() -> &'static [[f64; 6]; 2] {
    static W: OnceLock<[[f64; 6]; 2]> = OnceLock::new();
    W.get_or_init(|| {
        let mut a = DMatrix::<f64>::zeros(6, 3);
        for (r, (side, k)) in stencil_offsets().into_iter().enumerate() {
            a[(r, 0)] = 1.0;
            a[(r, 1)] = side as f64 - 0.5;
            a[(r, 2)] = k as f64;
        }
        let pinv = a.pseudo_inverse(1e-14).expect("full-rank stencil");
        let mut w = [[0.0; 6]; 2];
        for r in 0..6 {
            w[0][r] = pinv[(1, r)];
            w[1][r] = pinv[(2, r)];
        }
        w
    })
}

fn stencil_offsets() -> [(usize, i64); 6] {
    [(0, -1), (1, -1), (0, 0), (1, 0), (0, 1), (1, 1)]
}

/// Slope across the edge normal to `axis` whose low-side node is `low`.
pub fn local_slope(grid: &MacroGrid, u: &[f64], axis: usize, low: [usize; 2]) -> Result<Vec<f64>> {
    let n = grid.cells;
    if low[axis] >= n || (0..grid.dim).any(|j| low[j] > n) {
        return Err(invalid(format!(
            "edge {low:?} on axis {axis} is outside the grid"
        )));
    }
    let h = grid.h;
    if grid.dim == 1 {
        return Ok(vec![(u[low[0] + 1] - u[low[0]]) / h]);
    }
    let t = 1 - axis;
    if low[t] == 0 || low[t] == n {
        return Err(invalid(format!(
            "edge {low:?} on axis {axis} has no full stencil"
        )));
    }
    let w = plane_fit_weights();
    let mut g = [0.0; 2];
    for (r, (side, k)) in stencil_offsets().into_iter().enumerate() {
        let mut m = low;
        m[axis] += side;
        m[t] = (m[t] as i64 + k) as usize;
        let v = u[grid.index(m)];
        g[0] += w[0][r] * v;
        g[1] += w[1][r] * v;
    }
    // the weights are for the axis-0 orientation
    let mut s = vec![0.0; 2];
    s[axis] = g[0] / h;
    s[t] = g[1] / h;
    Ok(s)
}

/// Effective `d×d` matrices at every edge midpoint, per axis.
#[derive(Debug, Clone)]
pub struct EdgeTensors {
    pub axes: Vec<Vec<Mat>>,
}

/// Matrix `M` with `F(s) = M s` at `x`.
pub fn effective_matrix(field: &CoefficientField, x: &[f64], mode: &FluxMode) -> Result<Mat> {
    let d = field.dim();
    match mode {
        FluxMode::Reference { n } => {
            Ok(homogenized_tensor_with(field, x, *n, CellOptions::default())?.a0)
        }
        FluxMode::Hmm {
            eps,
            eta,
            tau,
            p,
            q,
            pts_per_eps,
        } => {
            let kernel = Kernel::new(*p, *q)?;
            let mut m = [[0.0; 2]; 2];
            for l in 0..d {
                let mut s = vec![0.0; d];
                s[l] = 1.0;
                let prob = MicroProblem::new(field.clone(), x.to_vec(), s, *eps, *eta)
                    .with_tau(*tau)
                    .with_pts_per_eps(*pts_per_eps);
                let f = hmm_flux(&prob, &kernel)?;
                for k in 0..d {
                    m[k][l] = f.value[k];
                }
            }
            Ok(m)
        }
    }
}

pub fn edge_tensors(cfg: &MacroConfig, grid: &MacroGrid) -> Result<EdgeTensors> {
    let wrap = |x: Vec<f64>, e: Error| Error::Edge {
        location: x,
        source: Box::new(e),
    };
    if cfg.field.is_x_independent() {
        let x = grid.edge_midpoint(0, [0, 0]);
        let m = effective_matrix(&cfg.field, &x, &cfg.flux_mode).map_err(|e| wrap(x, e))?;
        let axes = (0..grid.dim)
            .map(|k| vec![m; grid.edges(k).len()])
            .collect();
        return Ok(EdgeTensors { axes });
    }
    let mut axes = Vec::new();
    for k in 0..grid.dim {
        let mats = grid
            .edges(k)
            .into_par_iter()
            .map(|low| {
                let x = grid.edge_midpoint(k, low);
                effective_matrix(&cfg.field, &x, &cfg.flux_mode).map_err(|e| wrap(x, e))
            })
            .collect::<Result<Vec<_>>>()?;
        axes.push(mats);
    }
    Ok(EdgeTensors { axes })
}

/// Assembled macro operator `U ↦ div_H F(∇_H U)` on interior nodes.
#[derive(Debug, Clone)]
pub struct MacroOperator {
    pub grid: MacroGrid,
    pub tensors: EdgeTensors,
    edges: Vec<Vec<[usize; 2]>>,
}

impl MacroOperator {
    pub fn new(cfg: &MacroConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = MacroGrid::from_config(cfg);
        let tensors = edge_tensors(cfg, &grid)?;
        let edges = (0..grid.dim).map(|k| grid.edges(k)).collect();
        Ok(MacroOperator {
            grid,
            tensors,
            edges,
        })
    }

    /// Writes `div_H F` into `out`, zero on the boundary.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let g = &self.grid;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..g.dim {
            for (e, &low) in self.edges[k].iter().enumerate() {
                let s = local_slope(g, u, k, low)?;
                let m = &self.tensors.axes[k][e];
                let flux: f64 = (0..g.dim).map(|l| m[k][l] * s[l]).sum();
                let mut high = low;
                high[k] += 1;
                // flux leaves `low` and enters `high`
                out[g.index(low)] += flux / g.h;
                out[g.index(high)] -= flux / g.h;
            }
        }
        for (idx, v) in out.iter_mut().enumerate() {
            if g.is_boundary(g.multi_index(idx)) {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MacroState {
    pub prev: Vec<f64>,
    pub cur: Vec<f64>,
    /// Time of `cur`.
    pub t: f64,
    pub level: usize,
}

fn source_values(cfg: &MacroConfig, grid: &MacroGrid, t: f64) -> Option<Vec<f64>> {
    cfg.source.as_ref().map(|f| grid.sample(&|x| f(t, x)))
}

/// Levels 0 and 1 from a second-order Taylor step.
pub fn init_first_step(cfg: &MacroConfig, op: &MacroOperator, dt: f64) -> Result<MacroState> {
    let g = &op.grid;
    let u0 = g.sample(&*cfg.initial);
    let v0 = cfg.velocity.as_ref().map(|h| g.sample(&**h));
    let f0 = source_values(cfg, g, 0.0);
    let mut div = vec![0.0; g.len()];
    op.apply(&u0, &mut div)?;
    let u1 = (0..g.len())
        .map(|i| {
            let v = v0.as_ref().map_or(0.0, |v| v[i]);
            let f = f0.as_ref().map_or(0.0, |f| f[i]);
            u0[i] + dt * v + 0.5 * dt * dt * (div[i] + f)
        })
        .collect();
    Ok(MacroState {
        prev: u0,
        cur: u1,
        t: dt,
        level: 1,
    })
}

/// `U^{n+1} = 2U^n - U^{n-1} + Δt² (div_H F + f^n)`.
pub fn step_macro(
    state: &MacroState,
    cfg: &MacroConfig,
    op: &MacroOperator,
    dt: f64,
) -> Result<MacroState> {
    let g = &op.grid;
    let mut next = vec![0.0; g.len()];
    op.apply(&state.cur, &mut next)?;
    let f = source_values(cfg, g, state.t);
    for i in 0..g.len() {
        let src = f.as_ref().map_or(0.0, |f| f[i]);
        next[i] = 2.0 * state.cur[i] - state.prev[i] + dt * dt * (next[i] + src);
    }
    for (idx, v) in next.iter_mut().enumerate() {
        if g.is_boundary(g.multi_index(idx)) {
            *v = 0.0;
        }
    }
    Ok(MacroState {
        prev: state.cur.clone(),
        cur: next,
        t: state.t + dt,
        level: state.level + 1,
    })
}

#[derive(Debug, Clone)]
pub struct MacroTrajectory {
    pub grid: MacroGrid,
    pub dt: f64,
    pub steps: usize,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Relative drift of the discrete energy (meaningful without a source).
    pub energy_drift: f64,
}

impl MacroTrajectory {
    pub fn final_field(&self) -> &[f64] {
        &self.snapshots.last().expect("at least one snapshot").1
    }

    pub fn final_time(&self) -> f64 {
        self.snapshots.last().expect("at least one snapshot").0
    }

    /// Discrete L² distance of the final field from `u(T, ·)`.
    pub fn l2_error(&self, exact: &dyn Fn(f64, &[f64]) -> f64) -> f64 {
        let t = self.final_time();
        let e = self.grid.sample(&|x| exact(t, x));
        let diff: Vec<f64> = self
            .final_field()
            .iter()
            .zip(&e)
            .map(|(a, b)| a - b)
            .collect();
        self.grid.l2_norm(&diff)
    }

    /// Long-format CSV: `t,x[,y],U`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        writeln!(out, "{}", if g.dim == 1 { "t,x,U" } else { "t,x,y,U" })?;
        for (t, u) in &self.snapshots {
            for (idx, v) in u.iter().enumerate() {
                let x = g.coords(g.multi_index(idx));
                let xs: Vec<String> = x.iter().map(|c| format!("{c:.12e}")).collect();
                writeln!(out, "{t:.12e},{},{v:.12e}", xs.join(","))?;
            }
        }
        Ok(())
    }
}

/// `E^{n+1/2} = ½|δ_t U|² - ½⟨L U^{n+1}, U^n⟩`.
fn energy(
    op: &MacroOperator,
    prev: &[f64],
    cur: &[f64],
    dt: f64,
    scratch: &mut [f64],
) -> Result<(f64, f64)> {
    let g = &op.grid;
    let vol = g.h.powi(g.dim as i32);
    op.apply(cur, scratch)?;
    let kin: CompensatedSum = cur
        .iter()
        .zip(prev)
        .map(|(a, b)| ((a - b) / dt).powi(2))
        .collect();
    let pot: CompensatedSum = scratch.iter().zip(prev).map(|(a, b)| a * b).collect();
    let (k, p) = (0.5 * kin.value() * vol, -0.5 * pot.value() * vol);
    Ok((k + p, k.abs() + p.abs()))
}

pub fn run_macro(cfg: &MacroConfig) -> Result<MacroTrajectory> {
    let op = MacroOperator::new(cfg)?;
    let grid = op.grid;
    let (steps, dt) = cfg.steps();
    log::debug!(
        "macro run: {} nodes, {} steps, dt={:e}",
        grid.len(),
        steps,
        dt
    );
    if steps == 0 {
        return Ok(MacroTrajectory {
            grid,
            dt: 0.0,
            steps: 0,
            snapshots: vec![(0.0, grid.sample(&*cfg.initial))],
            energy_drift: 0.0,
        });
    }
    let keep = |level: usize| {
        level == steps
            || cfg
                .snapshot_every
                .is_some_and(|k| k > 0 && level.is_multiple_of(k))
    };
    let mut state = init_first_step(cfg, &op, dt)?;
    let mut snapshots = Vec::new();
    if keep(0) {
        snapshots.push((0.0, state.prev.clone()));
    }
    if keep(1) {
        snapshots.push((dt, state.cur.clone()));
    }
    let mut scratch = vec![0.0; grid.len()];
    let (e0, mut scale) = energy(&op, &state.prev, &state.cur, dt, &mut scratch)?;
    let mut worst: f64 = 0.0;
    for level in 2..=steps {
        state = step_macro(&state, cfg, &op, dt)?;
        // keep the recorded time exact at the end
        state.t = level as f64 * dt;
        let (e, s) = energy(&op, &state.prev, &state.cur, dt, &mut scratch)?;
        worst = worst.max((e - e0).abs());
        scale = scale.max(s);
        if keep(level) {
            snapshots.push((state.t, state.cur.clone()));
        }
    }
    Ok(MacroTrajectory {
        grid,
        dt,
        steps,
        snapshots,
        energy_drift: if scale > 0.0 { worst / scale } else { 0.0 },
    })
}
