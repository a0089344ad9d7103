//! Expansion of the scaled micro problem in `ε` and its periodic structure.
//!
//! In fast variables the micro problem reads
//! `v_tt = div(A(r0 + ε y, γ + y) ∇v)`, `v(0) = s·y`, `v_t(0) = 0`.
//! The discrete terms `v_m = ∂_ε^m v |_{ε=0}` solve leap-frog recursions with
//! the Taylor coefficients of the edge values as forcing, so the truncated
//! sums match the discrete `v(ε)` to `O(ε^{m+1})` exactly. Cell quantities
//! (`v00`, `v11j`, `v10`, `g`) live on the unit cell grid with the same fast
//! phase and time step. Only diagonal coefficients are supported.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_loglog, LineFit};
use crate::grid::{time_steps, DivForm, PeriodicGrid};
use crate::homog::{cell_operator, solve_cell_with, CellOptions};
use crate::kernels::Kernel;
use crate::media::CoefficientField;
use crate::micro::{flux_weights, micro_operator, MicroProblem};
use crate::sum::CompensatedSum;
use crate::upscale::{hmm_flux, matched_reference};

/// Truncated-domain setup for the hierarchy `v_0, v_1, ...`.
#[derive(Debug, Clone)]
pub struct ExpansionSetup {
    pub field: CoefficientField,
    pub r0: Vec<f64>,
    pub slope: Vec<f64>,
    pub phase: [f64; 2],
    /// Domain `[-L, L]^d` in whole cells.
    pub half_width: usize,
    pub pts_per_unit: usize,
    pub cfl: f64,
    pub t_final: f64,
}

impl ExpansionSetup {
    /// `r0 = 0`, zero phase, 32 points per cell and CFL 0.5.
    pub fn new(field: CoefficientField, slope: Vec<f64>, half_width: usize, t_final: f64) -> Self {
        let d = field.dim();
        ExpansionSetup {
            field,
            r0: vec![0.0; d],
            slope,
            phase: [0.0; 2],
            half_width,
            pts_per_unit: 32,
            cfl: 0.5,
            t_final,
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.r0.len() != d || self.slope.len() != d {
            return Err(invalid(format!("r0 and slope must have {d} components")));
        }
        if !self.field.is_diagonal() {
            return Err(invalid("expansion terms need a diagonal coefficient"));
        }
        if self.half_width == 0 || self.pts_per_unit < 8 {
            return Err(invalid("need half_width >= 1 and pts_per_unit >= 8"));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0 / (d as f64).sqrt()) {
            let h = self.h();
            return Err(Error::Cfl {
                dt: self.cfl * h / self.field.c2().sqrt(),
                bound: h / (d as f64 * self.field.c2()).sqrt(),
            });
        }
        if !(self.t_final > 0.0) {
            return Err(invalid("t_final must be positive"));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / self.pts_per_unit as f64
    }

    pub fn half_nodes(&self) -> usize {
        self.half_width * self.pts_per_unit
    }

    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid::new(self.dim(), 2 * self.half_nodes(), self.h())
            .expect("valid truncated grid")
    }

    /// Coordinate of array position `a`.
    pub fn coord(&self, a: usize) -> f64 {
        (a as f64 - self.half_nodes() as f64) * self.h()
    }

    pub fn time_grid(&self) -> (usize, f64) {
        let n = time_steps(self.t_final, self.h(), self.cfl, self.field.c2());
        (n, self.t_final / n as f64)
    }

    /// Largest window that the periodic wrap cannot reach by `t_final`.
    pub fn clean_window(&self) -> f64 {
        self.half_width as f64 - self.t_final * self.field.c2().sqrt() - self.h()
    }

    fn edges<F: Fn(&[f64], &[f64], usize) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        let grid = self.grid();
        let d = self.dim();
        (0..d)
            .map(|k| {
                grid.tabulate(|m| {
                    let mut y = [0.0; 2];
                    let mut fast = [0.0; 2];
                    for j in 0..d {
                        y[j] = self.coord(m[j]) + if j == k { 0.5 * self.h() } else { 0.0 };
                        fast[j] = self.phase[j] + y[j];
                    }
                    f(&y[..d], &fast[..d], k)
                })
            })
            .collect()
    }

    fn form(&self, edge: Vec<Vec<f64>>) -> Result<DivForm> {
        DivForm::new(self.grid(), edge, None)
    }

    /// Edge values `A(r0, γ + y)`.
    fn frozen_operator(&self) -> Result<DivForm> {
        self.form(self.edges(|_, fast, k| self.field.eval(&self.r0, fast)[k][k]))
    }

    /// Edge values `A(r0 + ε y, γ + y)`.
    fn scaled_operator(&self, eps: f64) -> Result<DivForm> {
        self.form(self.edges(|y, fast, k| {
            let x: Vec<f64> = self.r0.iter().zip(y).map(|(r, v)| r + eps * v).collect();
            self.field.eval(&x, fast)[k][k]
        }))
    }

    /// Edge values of `∂_ε^n A(r0 + ε y, γ + y)` at `ε = 0`.
    fn taylor_operator(&self, n: usize) -> Result<DivForm> {
        let d = self.dim();
        self.form(self.edges(|y, fast, k| {
            let mut acc = 0.0;
            for b in multi_indices(d, n) {
                let weight = factorial(n) / b.iter().map(|&bj| factorial(bj)).product::<f64>();
                let mono: f64 = y.iter().zip(&b).map(|(v, &bj)| v.powi(bj as i32)).product();
                acc += weight * mono * self.field.slow_derivative(&b, &self.r0, fast)[k][k];
            }
            acc
        }))
    }

    fn window_nodes(&self, window: f64) -> Vec<usize> {
        let grid = self.grid();
        (0..grid.len())
            .filter(|&idx| {
                let m = grid.multi_index(idx);
                (0..self.dim()).all(|j| self.coord(m[j]).abs() <= window + 1e-12)
            })
            .collect()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn multi_indices(d: usize, n: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        vec![vec![n]]
    } else {
        (0..=n).map(|b| vec![b, n - b]).collect()
    }
}

/// One term of the hierarchy on the truncated domain at every time level.
#[derive(Debug, Clone)]
pub struct ExpansionTerm {
    pub order: usize,
    pub grid: PeriodicGrid,
    pub dt: f64,
    /// Order 0 holds the full `v_0 = s·y + v_00`.
    pub levels: Vec<Vec<f64>>,
}

impl ExpansionTerm {
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn final_level(&self) -> &[f64] {
        self.levels.last().expect("at least one level")
    }
}

fn linear_part(setup: &ExpansionSetup) -> Vec<f64> {
    let grid = setup.grid();
    (0..grid.len())
        .map(|idx| {
            let m = grid.multi_index(idx);
            (0..setup.dim())
                .map(|j| setup.slope[j] * setup.coord(m[j]))
                .sum()
        })
        .collect()
}

/// `v_0, ..., v_{m_max}` stepped together.
pub fn solve_hierarchy(setup: &ExpansionSetup, m_max: usize) -> Result<Vec<ExpansionTerm>> {
    setup.validate()?;
    let grid = setup.grid();
    let len = grid.len();
    let (steps, dt) = setup.time_grid();
    let dt2 = dt * dt;
    let l0 = setup.frozen_operator()?;
    let taylor = (1..=m_max)
        .map(|n| setup.taylor_operator(n))
        .collect::<Result<Vec<_>>>()?;
    let s = &setup.slope;
    let zero = vec![0.0; setup.dim()];
    let lin = linear_part(setup);

    let mut prev = vec![vec![0.0; len]; m_max + 1];
    let mut cur = vec![vec![0.0; len]; m_max + 1];
    let mut next = vec![vec![0.0; len]; m_max + 1];
    let mut out: Vec<ExpansionTerm> = (0..=m_max)
        .map(|order| ExpansionTerm {
            order,
            grid,
            dt,
            levels: Vec::with_capacity(steps + 1),
        })
        .collect();
    let store = |out: &mut Vec<ExpansionTerm>, cur: &[Vec<f64>]| {
        for (m, term) in out.iter_mut().enumerate() {
            if m == 0 {
                term.levels
                    .push(cur[0].iter().zip(&lin).map(|(w, l)| w + l).collect());
            } else {
                term.levels.push(cur[m].clone());
            }
        }
    };
    store(&mut out, &cur);

    let mut rhs = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    for level in 0..steps {
        for m in 0..=m_max {
            l0.apply(&cur[m], if m == 0 { s } else { &zero }, &mut rhs);
            for j in 0..m {
                taylor[m - j - 1].apply(&cur[j], if j == 0 { s } else { &zero }, &mut tmp);
                let c = binomial(m, j);
                for i in 0..len {
                    rhs[i] += c * tmp[i];
                }
            }
            for i in 0..len {
                next[m][i] = if level == 0 {
                    cur[m][i] + 0.5 * dt2 * rhs[i]
                } else {
                    2.0 * cur[m][i] - prev[m][i] + dt2 * rhs[i]
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        store(&mut out, &cur);
    }
    Ok(out)
}

pub fn solve_v0(setup: &ExpansionSetup) -> Result<ExpansionTerm> {
    Ok(solve_hierarchy(setup, 0)?.remove(0))
}

pub fn solve_vm(setup: &ExpansionSetup, m: usize) -> Result<ExpansionTerm> {
    Ok(solve_hierarchy(setup, m)?.remove(m))
}

/// Discrete `v(ε)` on the truncated domain, one entry per level.
pub fn solve_scaled(setup: &ExpansionSetup, eps: f64) -> Result<Vec<Vec<f64>>> {
    setup.validate()?;
    let op = setup.scaled_operator(eps)?;
    let len = op.grid().len();
    let (steps, dt) = setup.time_grid();
    let dt2 = dt * dt;
    let s = &setup.slope;
    let lin = linear_part(setup);
    let full = |w: &[f64]| -> Vec<f64> { w.iter().zip(&lin).map(|(a, b)| a + b).collect() };
    let mut prev = vec![0.0; len];
    let mut cur = vec![0.0; len];
    let mut next = vec![0.0; len];
    let mut rhs = vec![0.0; len];
    let mut levels = vec![full(&cur)];
    for level in 0..steps {
        op.apply(&cur, s, &mut rhs);
        for i in 0..len {
            next[i] = if level == 0 {
                cur[i] + 0.5 * dt2 * rhs[i]
            } else {
                2.0 * cur[i] - prev[i] + dt2 * rhs[i]
            };
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        levels.push(full(&cur));
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionErrors {
    pub eps: f64,
    /// `E_m` for `m = 0..=m_max`.
    pub errors: Vec<f64>,
}

/// `E_m(ε) = max |v(ε) - Σ_{k≤m} ε^k/k! v_k|` over the window `|y| ≤ window`
/// and all time levels.
pub fn expansion_error(
    setup: &ExpansionSetup,
    m_max: usize,
    eps_list: &[f64],
    window: f64,
) -> Result<Vec<ExpansionErrors>> {
    if window > setup.clean_window() {
        return Err(invalid(format!(
            "window {window} is reached by the periodic wrap (limit {:.3})",
            setup.clean_window()
        )));
    }
    let terms = solve_hierarchy(setup, m_max)?;
    let nodes = setup.window_nodes(window);
    eps_list
        .par_iter()
        .map(|&eps| {
            let v = solve_scaled(setup, eps)?;
            let mut errors = vec![0.0f64; m_max + 1];
            for (level, vl) in v.iter().enumerate() {
                for &i in &nodes {
                    let mut approx = 0.0;
                    for (m, term) in terms.iter().enumerate() {
                        approx += eps.powi(m as i32) / factorial(m) * term.levels[level][i];
                        errors[m] = errors[m].max((vl[i] - approx).abs());
                    }
                }
            }
            Ok(ExpansionErrors { eps, errors })
        })
        .collect()
}

/// Oscillation envelope of `v` in `|y|`: for each cell pair `[k, k+1)` and
/// `(-k-1, -k]` whose centre distance lies in `range`, the largest deviation
/// from the cell mean. Returns `(centres, maxima)`.
pub fn oscillation_envelope(
    setup: &ExpansionSetup,
    term: &ExpansionTerm,
    level: usize,
    range: (f64, f64),
) -> Result<(Vec<f64>, Vec<f64>)> {
    if setup.dim() != 1 {
        return Err(invalid("growth exponents are measured in 1D"));
    }
    if range.1 > setup.clean_window() {
        return Err(invalid("growth range is reached by the periodic wrap"));
    }
    let v = term
        .levels
        .get(level)
        .ok_or_else(|| invalid(format!("level {level} not stored")))?;
    let mut centers = Vec::new();
    let mut maxima = Vec::new();
    let mut k = range.0.floor() as i64;
    while (k as f64) + 0.5 <= range.1 {
        let c = k as f64 + 0.5;
        if c >= range.0 {
            let lo = k as f64;
            let hi = (k + 1) as f64;
            let side = |sign: f64| -> Vec<f64> {
                v.iter()
                    .enumerate()
                    .filter(|&(a, _)| (lo..hi).contains(&(sign * setup.coord(a))))
                    .map(|(_, &x)| x)
                    .collect()
            };
            centers.push(c);
            maxima.push(oscillation(&side(1.0)).max(oscillation(&side(-1.0))));
        }
        k += 1;
    }
    Ok((centers, maxima))
}

/// Log-log exponent of [`oscillation_envelope`].
pub fn growth_exponent(
    setup: &ExpansionSetup,
    term: &ExpansionTerm,
    level: usize,
    range: (f64, f64),
) -> Result<LineFit> {
    let (centers, maxima) = oscillation_envelope(setup, term, level, range)?;
    fit_loglog(&centers, &maxima, 0.0, 3)
}

fn oscillation(cell: &[f64]) -> f64 {
    if cell.is_empty() {
        return 0.0;
    }
    let mean = cell.iter().sum::<f64>() / cell.len() as f64;
    cell.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()))
}

/// Periodicity defect and size of `v00 = v0 - s·y` at the final level,
/// measured on `|y| ≤ window`.
pub fn v00_structure(
    setup: &ExpansionSetup,
    v0: &ExpansionTerm,
    window: f64,
) -> Result<(f64, f64)> {
    let grid = setup.grid();
    let lin = linear_part(setup);
    let v00: Vec<f64> = v0
        .final_level()
        .iter()
        .zip(&lin)
        .map(|(a, b)| a - b)
        .collect();
    let n = setup.pts_per_unit;
    let mut defect: f64 = 0.0;
    let mut size: f64 = 0.0;
    for idx in setup.window_nodes(window) {
        let mut m = grid.multi_index(idx);
        size = size.max(v00[idx].abs());
        m[0] += n;
        if m[0] < grid.n() {
            defect = defect.max((v00[grid.index(m)] - v00[idx]).abs());
        }
    }
    Ok((defect, size))
}

/// Periodic cell equations for `v00`, `v11j` and `v10`.
#[derive(Debug, Clone)]
pub struct CellSystem {
    pub field: CoefficientField,
    pub r0: Vec<f64>,
    pub slope: Vec<f64>,
    pub phase: [f64; 2],
    pub n: usize,
    /// `L = div_h(A(r0, ·) ∇_h)`.
    pub op: DivForm,
    /// `div_h(∂_{x_j} A ·)` per slow direction.
    pub slow: Vec<DivForm>,
}

impl CellSystem {
    pub fn new(
        field: &CoefficientField,
        r0: &[f64],
        slope: &[f64],
        phase: [f64; 2],
        n: usize,
    ) -> Result<Self> {
        let d = field.dim();
        if r0.len() != d || slope.len() != d {
            return Err(invalid(format!("r0 and slope must have {d} components")));
        }
        if !field.is_diagonal() {
            return Err(invalid("cell expansion terms need a diagonal coefficient"));
        }
        let op = cell_operator(field, r0, n, phase)?;
        let grid = *op.grid();
        let h = grid.h();
        let mut slow = Vec::with_capacity(d);
        for j in 0..d {
            let edge = (0..d)
                .map(|k| {
                    grid.tabulate(|m| {
                        let mut y = [phase[0] + m[0] as f64 * h, phase[1] + m[1] as f64 * h];
                        y[k] += 0.5 * h;
                        field.slow_grad(r0, &y[..d])[j][k][k]
                    })
                })
                .collect();
            slow.push(DivForm::new(grid, edge, None)?);
        }
        Ok(CellSystem {
            field: field.clone(),
            r0: r0.to_vec(),
            slope: slope.to_vec(),
            phase,
            n,
            op,
            slow,
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.op.grid()
    }

    /// `f11j = div_h(∂_{x_j} A (s + ∇_h v00))`.
    pub fn f11(&self, j: usize, v00: &[f64], out: &mut [f64]) {
        self.slow[j].apply(v00, &self.slope, out);
    }

    /// `f10`: node average of the two edge values of `∂_{x_k} A (s + ∇_h v00)`
    /// along each axis `k`, summed over `k`.
    pub fn f10(&self, v00: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let mut out = vec![0.0; g.len()];
        for k in 0..self.dim() {
            let flux = self.slow[k].edge_flux(v00, &self.slope, k);
            for (idx, o) in out.iter_mut().enumerate() {
                *o += 0.5 * (flux[idx] + flux[g.shift(idx, k, false)]);
            }
        }
        out
    }

    /// `M[w] = Σ_j (a₊ w₊ - a₋ w₋)/h` along axis `j` with `w = w_j`.
    pub fn m_term(&self, w: &[Vec<f64>]) -> Vec<f64> {
        let g = self.grid();
        let h = g.h();
        let mut out = vec![0.0; g.len()];
        for (j, wj) in w.iter().enumerate() {
            let a = self.op.edge(j);
            for (idx, o) in out.iter_mut().enumerate() {
                let lo = g.shift(idx, j, false);
                *o += (a[idx] * wj[g.shift(idx, j, true)] - a[lo] * wj[lo]) / h;
            }
        }
        out
    }

    /// Leap-frog evolution of all cell terms with `n_steps` steps of `dt`.
    pub fn evolve(&self, dt: f64, n_steps: usize) -> CellEvolution {
        let g = *self.grid();
        let len = g.len();
        let d = self.dim();
        let dt2 = dt * dt;
        let zero = vec![0.0; d];
        // unknowns: v00, v11_1..v11_d, v10~
        let count = d + 2;
        let mut prev = vec![vec![0.0; len]; count];
        let mut cur = vec![vec![0.0; len]; count];
        let mut next = vec![vec![0.0; len]; count];
        let mut levels: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; len]]; count];
        let mut mean_force = Vec::with_capacity(n_steps + 1);
        let mut max_mean: f64 = 0.0;
        let mut rhs = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        for level in 0..=n_steps {
            // forcing of v10 at this level, also needed for g
            let mut force10 = self.m_term(&cur[1..=d]);
            for (f, v) in force10.iter_mut().zip(self.f10(&cur[0])) {
                *f += v;
            }
            let mean = g.mean(&force10);
            mean_force.push(mean);
            if level == n_steps {
                break;
            }
            for u in 0..count {
                if u == 0 {
                    self.op.apply(&cur[0], &self.slope, &mut rhs);
                } else if u <= d {
                    self.op.apply(&cur[u], &zero, &mut rhs);
                    self.f11(u - 1, &cur[0], &mut tmp);
                    for i in 0..len {
                        rhs[i] += tmp[i];
                    }
                } else {
                    self.op.apply(&cur[u], &zero, &mut rhs);
                    for i in 0..len {
                        rhs[i] += force10[i] - mean;
                    }
                }
                for i in 0..len {
                    next[u][i] = if level == 0 {
                        cur[u][i] + 0.5 * dt2 * rhs[i]
                    } else {
                        2.0 * cur[u][i] - prev[u][i] + dt2 * rhs[i]
                    };
                }
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
            for u in 0..count {
                max_mean = max_mean.max(g.mean(&cur[u]).abs());
                levels[u].push(cur[u].clone());
            }
        }
        let v10 = levels.pop().expect("v10 levels");
        let v00 = levels.remove(0);
        let g_even = integrate_g(&mean_force, dt);
        CellEvolution {
            dt,
            n_steps,
            v00,
            v11: levels,
            v10,
            mean_force,
            g_even,
            max_mean,
        }
    }
}

/// `g'' = m(t)`, `g(0) = g'(0) = 0` by the classical four-stage method with
/// step `2 dt`, reading `m` at the leap-frog levels.
fn integrate_g(m: &[f64], dt: f64) -> Vec<f64> {
    let h = 2.0 * dt;
    let mut g = 0.0;
    let mut gp = 0.0;
    let mut out = vec![0.0];
    let mut n = 0;
    while n + 2 < m.len() {
        let (m0, m1, m2) = (m[n], m[n + 1], m[n + 2]);
        let k1 = (gp, m0);
        let k2 = (gp + 0.5 * h * k1.1, m1);
        let k3 = (gp + 0.5 * h * k2.1, m1);
        let k4 = (gp + h * k3.1, m2);
        g += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        gp += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        out.push(g);
        n += 2;
    }
    out
}

#[derive(Debug, Clone)]
pub struct CellEvolution {
    pub dt: f64,
    pub n_steps: usize,
    pub v00: Vec<Vec<f64>>,
    /// `v11[j][level]`.
    pub v11: Vec<Vec<Vec<f64>>>,
    /// Zero-mean part `ṽ10`.
    pub v10: Vec<Vec<f64>>,
    /// Cell mean of the `v10` forcing per level.
    pub mean_force: Vec<f64>,
    /// `g` at levels `0, 2, 4, ...`.
    pub g_even: Vec<f64>,
    /// Largest cell mean seen in `v00`, `v11j`, `ṽ10`.
    pub max_mean: f64,
}

impl CellEvolution {
    pub fn g_at(&self, level: usize) -> Option<f64> {
        if level.is_multiple_of(2) {
            self.g_even.get(level / 2).copied()
        } else {
            None
        }
    }

    /// `max_t |g(t)| / (1 + t³)`.
    pub fn g_cubic_bound(&self) -> f64 {
        self.g_even
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let t = 2.0 * k as f64 * self.dt;
                g.abs() / (1.0 + t.powi(3))
            })
            .fold(0.0, f64::max)
    }

    /// `‖v00(t)‖_{H¹(Y)}` per level.
    pub fn v00_h1_history(&self, grid: &PeriodicGrid) -> Vec<f64> {
        self.v00.iter().map(|v| grid.h1_norm(v)).collect()
    }
}

/// `v10 + g + Σ_j y_j v11j` on the truncated grid of `setup` at `level`.
pub fn reconstruct_v1(
    setup: &ExpansionSetup,
    cell: &CellSystem,
    evo: &CellEvolution,
    level: usize,
) -> Result<Vec<f64>> {
    if cell.n != setup.pts_per_unit || cell.phase != setup.phase {
        return Err(Error::Mismatch(
            "cell grid differs from the truncated grid".into(),
        ));
    }
    let g = evo
        .g_at(level)
        .ok_or_else(|| invalid(format!("g is only available at even levels, got {level}")))?;
    let tg = setup.grid();
    let cg = cell.grid();
    let n = cell.n;
    Ok((0..tg.len())
        .map(|idx| {
            let m = tg.multi_index(idx);
            let c = cg.index([m[0] % n, m[1] % n]);
            let mut v = evo.v10[level][c] + g;
            for j in 0..setup.dim() {
                v += setup.coord(m[j]) * evo.v11[j][level][c];
            }
            v
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiPolyReport {
    /// `max |v1 - v1_rec| / max |v1|` over the window and even levels.
    pub relative_difference: f64,
    pub max_mean: f64,
    pub g_cubic_bound: f64,
}

/// Decomposes `v1` into periodic parts and compares the reconstruction with
/// the direct truncated-domain solve on `|y| ≤ window`.
pub fn quasi_poly_decompose(
    setup: &ExpansionSetup,
    window: f64,
) -> Result<(CellEvolution, QuasiPolyReport)> {
    if window > setup.clean_window() {
        return Err(invalid("window is reached by the periodic wrap"));
    }
    let v1 = solve_vm(setup, 1)?;
    let cell = CellSystem::new(
        &setup.field,
        &setup.r0,
        &setup.slope,
        setup.phase,
        setup.pts_per_unit,
    )?;
    let (steps, dt) = setup.time_grid();
    let evo = cell.evolve(dt, steps);
    let nodes = setup.window_nodes(window);
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for level in (0..=steps).step_by(2) {
        let rec = reconstruct_v1(setup, &cell, &evo, level)?;
        for &i in &nodes {
            diff = diff.max((rec[i] - v1.levels[level][i]).abs());
            scale = scale.max(v1.levels[level][i].abs());
        }
    }
    let report = QuasiPolyReport {
        relative_difference: if scale > 0.0 { diff / scale } else { diff },
        max_mean: evo.max_mean,
        g_cubic_bound: evo.g_cubic_bound(),
    };
    Ok((evo, report))
}

/// Kernel-weighted time averages of the cell terms.
#[derive(Debug, Clone)]
pub struct TimeAverage {
    pub d00: Vec<f64>,
    pub d11: Vec<Vec<f64>>,
    pub d10: Vec<f64>,
    pub g_avg: f64,
    pub horizon: f64,
}

/// Averages over `[-T, T]` with `K_T`, using the even extension in time.
pub fn time_averages(evo: &CellEvolution, kernel: &Kernel, horizon: f64) -> Result<TimeAverage> {
    let available = evo.n_steps as f64 * evo.dt;
    if available < horizon * (1.0 - 1e-9) {
        return Err(Error::Horizon {
            available,
            required: horizon,
        });
    }
    let weight = |level: usize, dt: f64| -> f64 {
        let w = if level == 0 { dt } else { 2.0 * dt };
        w * kernel.eval_scaled(horizon, level as f64 * evo.dt)
    };
    let average = |levels: &[Vec<f64>]| -> Vec<f64> {
        let len = levels[0].len();
        let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); len];
        for (level, v) in levels.iter().enumerate() {
            let w = weight(level, evo.dt);
            if w == 0.0 {
                continue;
            }
            for (a, x) in acc.iter_mut().zip(v) {
                a.add(w * x);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    };
    let mut g_acc = CompensatedSum::new();
    for (k, g) in evo.g_even.iter().enumerate() {
        let t = 2.0 * k as f64 * evo.dt;
        let w = if k == 0 { 2.0 * evo.dt } else { 4.0 * evo.dt };
        g_acc.add(w * kernel.eval_scaled(horizon, t) * g);
    }
    Ok(TimeAverage {
        d00: average(&evo.v00),
        d11: evo.v11.iter().map(|v| average(v)).collect(),
        d10: average(&evo.v10),
        g_avg: g_acc.value(),
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageResiduals {
    /// `‖L d00 + div(A s)‖`.
    pub r00: f64,
    /// Largest `‖L d11j + div(∂_j A (s + ∇d00))‖`.
    pub r11: f64,
    /// `‖L d10 + M[d11] + f10[d00] - K̃‖`.
    pub r10: f64,
}

impl TimeAverage {
    pub fn residuals(&self, cell: &CellSystem) -> AverageResiduals {
        let g = cell.grid();
        let len = g.len();
        let zero = vec![0.0; cell.dim()];
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        cell.op.apply(&self.d00, &cell.slope, &mut a);
        let r00 = g.l2_norm(&a);
        let mut r11: f64 = 0.0;
        for (j, d) in self.d11.iter().enumerate() {
            cell.op.apply(d, &zero, &mut a);
            cell.f11(j, &self.d00, &mut b);
            let r: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            r11 = r11.max(g.l2_norm(&r));
        }
        cell.op.apply(&self.d10, &zero, &mut a);
        let m = cell.m_term(&self.d11);
        let f = cell.f10(&self.d00);
        let mut r: Vec<f64> = (0..len).map(|i| a[i] + m[i] + f[i]).collect();
        g.subtract_mean(&mut r);
        AverageResiduals {
            r00,
            r11,
            r10: g.l2_norm(&r),
        }
    }

    /// `‖d00 - Σ s_ℓ χ_ℓ‖_{H¹(Y)}` with correctors on the same cell grid.
    pub fn corrector_error(&self, cell: &CellSystem) -> Result<f64> {
        let opts = CellOptions {
            phase: cell.phase,
            ..CellOptions::default()
        };
        let sol = solve_cell_with(&cell.field, &cell.r0, cell.n, opts)?;
        let diff: Vec<f64> = (0..self.d00.len())
            .map(|i| {
                let z: f64 = sol
                    .correctors
                    .iter()
                    .zip(&cell.slope)
                    .map(|(c, s)| s * c[i])
                    .sum();
                self.d00[i] - z
            })
            .collect();
        Ok(cell.grid().h1_norm(&diff))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAverageReport {
    pub alpha: f64,
    pub residuals: AverageResiduals,
    pub corrector: f64,
    pub max_mean: f64,
}

/// Time averages for `α = ε/τ`: fast horizon `1/(2α)`, cell grid `n`.
pub fn time_average_study(
    field: &CoefficientField,
    r0: &[f64],
    slope: &[f64],
    kernel: &Kernel,
    n: usize,
    cfl: f64,
    alpha: f64,
) -> Result<TimeAverageReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let cell = CellSystem::new(field, r0, slope, [0.0; 2], n)?;
    let horizon = 0.5 / alpha;
    let steps = time_steps(horizon, 1.0 / n as f64, cfl, field.c2());
    let evo = cell.evolve(horizon / steps as f64, steps);
    let ta = time_averages(&evo, kernel, horizon)?;
    Ok(TimeAverageReport {
        alpha,
        residuals: ta.residuals(&cell),
        corrector: ta.corrector_error(&cell)?,
        max_mean: evo.max_mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxDecomposition {
    pub total: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub eps_f1: Vec<f64>,
    pub delta: Vec<f64>,
    pub tail: Vec<f64>,
    /// `A⁰ s` from the matched cell problem.
    pub reference: Vec<f64>,
}

impl FluxDecomposition {
    pub fn f0_error(&self) -> f64 {
        self.f0
            .iter()
            .zip(&self.reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn f1_norm(&self) -> f64 {
        self.f1.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Splits the HMM flux of `problem` into `F0 + εF1 + δ + E_tail`.
pub fn flux_decomposition(problem: &MicroProblem, kernel: &Kernel) -> Result<FluxDecomposition> {
    let geo = problem.geometry()?;
    let d = geo.dim;
    let p = geo.pts_per_eps;
    let cell = CellSystem::new(&problem.field, &problem.r0, &problem.slope, geo.phase, p)?;
    let fast_dt = geo.dt / problem.eps;
    let evo = cell.evolve(fast_dt, geo.n_steps);
    let ta = time_averages(&evo, kernel, geo.n_steps as f64 * fast_dt)?;

    let op = micro_operator(problem, &geo)?;
    let grid = *op.grid();
    let weights = flux_weights(kernel, problem.eta, &geo, &grid);
    let cg = *cell.grid();
    let cell_of = |idx: usize| -> usize {
        let m = grid.multi_index(idx);
        cg.index([m[0] % p, m[1] % p])
    };
    let pf = p as f64;
    let mut f0 = vec![0.0; d];
    let mut f1 = vec![0.0; d];
    let mut delta = vec![0.0; d];
    for k in 0..d {
        let a = op.edge(k);
        let (mut s0, mut s1, mut sd) = (
            CompensatedSum::new(),
            CompensatedSum::new(),
            CompensatedSum::new(),
        );
        for &(idx, wt) in &weights.edge[k] {
            let nb = grid.shift(idx, k, true);
            let (c, cn) = (cell_of(idx), cell_of(nb));
            let w = wt * a[idx];
            s0.add(w * (problem.slope[k] + pf * (ta.d00[cn] - ta.d00[c])));
            s1.add(w * (pf * (ta.d10[cn] - ta.d10[c]) + 0.5 * (ta.d11[k][cn] + ta.d11[k][c])));
            let m = grid.multi_index(idx);
            let mut acc = 0.0;
            for j in 0..d {
                let half = if j == k { 0.5 } else { 0.0 };
                let x = (geo.node(m[j]) as f64 + half) * geo.dx;
                acc += x * pf * (ta.d11[j][cn] - ta.d11[j][c]);
            }
            sd.add(w * acc);
        }
        f0[k] = s0.value();
        f1[k] = s1.value();
        delta[k] = sd.value();
    }
    let total = hmm_flux(problem, kernel)?.value;
    let reference = matched_reference(problem)?.value;
    let eps_f1: Vec<f64> = f1.iter().map(|v| problem.eps * v).collect();
    let tail = (0..d)
        .map(|k| total[k] - f0[k] - eps_f1[k] - delta[k])
        .collect();
    Ok(FluxDecomposition {
        total,
        f0,
        f1,
        eps_f1,
        delta,
        tail,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_setup() -> ExpansionSetup {
        let field = CoefficientField::catalog("locally-periodic-1d-zero-phase").unwrap();
        ExpansionSetup::new(field, vec![1.0], 3, 1.0)
    }

    #[test]
    fn constant_medium_has_trivial_hierarchy() {
        let field = CoefficientField::constant(1, 1.4).unwrap();
        let setup = ExpansionSetup::new(field, vec![1.0], 3, 1.0);
        let terms = solve_hierarchy(&setup, 2).unwrap();
        let lin = linear_part(&setup);
        for (a, b) in terms[0].final_level().iter().zip(&lin) {
            assert!((a - b).abs() < 1e-14);
        }
        for t in &terms[1..] {
            assert!(t.levels.iter().flatten().all(|v| *v == 0.0));
        }
        let e = expansion_error(&setup, 0, &[0.1], 1.5).unwrap();
        assert!(e[0].errors[0] < 1e-14);
    }

    #[test]
    fn x_independent_field_has_no_higher_terms() {
        let field = CoefficientField::catalog("periodic-1d").unwrap();
        let setup = ExpansionSetup::new(field.clone(), vec![1.0], 2, 0.5);
        let terms = solve_hierarchy(&setup, 2).unwrap();
        assert!(terms[1].levels.iter().flatten().all(|v| *v == 0.0));
        let cell = CellSystem::new(&field, &[0.0], &[1.0], [0.0; 2], 16).unwrap();
        let evo = cell.evolve(0.01, 40);
        assert!(evo.v11[0].iter().flatten().all(|v| *v == 0.0));
        assert!(evo.v10.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn taylor_terms_match_difference_quotients() {
        let setup = fig2_setup();
        let terms = solve_hierarchy(&setup, 1).unwrap();
        let e = 1e-5;
        let plus = solve_scaled(&setup, e).unwrap();
        let minus = solve_scaled(&setup, -e).unwrap();
        let last = plus.len() - 1;
        for i in setup.window_nodes(1.5) {
            let fd = (plus[last][i] - minus[last][i]) / (2.0 * e);
            assert!((fd - terms[1].levels[last][i]).abs() < 1e-6);
        }
    }

    #[test]
    fn truncation_error_drops_with_order() {
        let setup = fig2_setup();
        let e = expansion_error(&setup, 2, &[1.0 / 64.0], 1.5).unwrap();
        let err = &e[0].errors;
        assert!(err[0] > err[1] && err[1] > err[2], "{err:?}");
    }

    #[test]
    fn reconstruction_matches_direct_v1() {
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let setup = ExpansionSetup::new(field, vec![1.0], 4, 1.0);
        let (evo, report) = quasi_poly_decompose(&setup, 2.0).unwrap();
        assert!(report.relative_difference < 1e-3, "{report:?}");
        assert!(report.max_mean < 1e-10);
        assert!(evo.g_even.len() > 10);
    }

    #[test]
    fn v00_is_periodic_and_bounded() {
        let field = CoefficientField::catalog("locally-periodic-1d").unwrap();
        let setup = ExpansionSetup::new(field, vec![1.0], 6, 0.5);
        let v0 = solve_v0(&setup).unwrap();
        let (defect, size) = v00_structure(&setup, &v0, 3.0).unwrap();
        assert!(
            defect < 1e-12 && size > 1e-3 && size < 1.0,
            "{defect} {size}"
        );
    }

    #[test]
    fn constant_medium_time_averages_vanish() {
        let field = CoefficientField::constant(1, 2.0).unwrap();
        let k = Kernel::new(3, 6).unwrap();
        let rep = time_average_study(&field, &[0.0], &[1.0], &k, 16, 0.5, 0.25).unwrap();
        assert_eq!(rep.residuals.r00, 0.0);
        assert_eq!(rep.corrector, 0.0);
    }

    #[test]
    fn averages_need_enough_horizon() {
        let field = CoefficientField::catalog("periodic-1d").unwrap();
        let cell = CellSystem::new(&field, &[0.0], &[1.0], [0.0; 2], 16).unwrap();
        let evo = cell.evolve(0.01, 10);
        let k = Kernel::new(3, 6).unwrap();
        assert!(matches!(
            time_averages(&evo, &k, 1.0),
            Err(Error::Horizon { .. })
        ));
    }

    #[test]
    fn constant_medium_flux_decomposition() {
        let field = CoefficientField::constant(1, 1.5).unwrap();
        let k = Kernel::new(3, 6).unwrap();
        let p = MicroProblem::new(field, vec![0.2], vec![2.0], 0.01, 0.05);
        let fd = flux_decomposition(&p, &k).unwrap();
        assert!((fd.f0[0] - 3.0).abs() < 1e-10);
        assert_eq!(fd.f1[0], 0.0);
        assert_eq!(fd.delta[0], 0.0);
        assert!(fd.tail[0].abs() < 1e-10);
    }

    #[test]
    fn rejects_non_diagonal_fields() {
        let field =
            CoefficientField::custom(2, "full", 0.5, 2.0, |_, _| [[1.0, 0.2], [0.2, 1.0]]).unwrap();
        let setup = ExpansionSetup::new(field, vec![1.0, 0.0], 2, 0.5);
        assert!(solve_v0(&setup).is_err());
    }
}
