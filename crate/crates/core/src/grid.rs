//! Periodic grids and the conservative divergence-form stencil shared by the
//! micro, cell and expansion solvers.
//!
//! Nodes are indexed with axis 0 fastest. The edge coefficient `edge[k][i]`
//! lives on the edge from node `i` to `i + e_k`; the optional cross
//! coefficient `A_12` lives on nodes and is combined with central differences.

use crate::error::{invalid, Result};
use crate::sum::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    dim: usize,
    n: [usize; 2],
    h: f64,
}

impl PeriodicGrid {
    /// `n` nodes per axis with spacing `h`.
    pub fn new(dim: usize, n: usize, h: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 3 || !(h > 0.0) {
            return Err(invalid(format!(
                "periodic grid needs n >= 3 and h > 0, got n={n}, h={h}"
            )));
        }
        let n = if dim == 1 { [n, 1] } else { [n, n] };
        Ok(PeriodicGrid { dim, n, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n[0]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    #[inline]
    pub fn index(&self, i: [usize; 2]) -> usize {
        i[1] * self.n[0] + i[0]
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.n[0], idx / self.n[0]]
    }

    /// Index of the neighbour `idx ± e_k` with periodic wrap.
    #[inline]
    pub fn shift(&self, idx: usize, k: usize, forward: bool) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.n[k];
        m[k] = if forward {
            (m[k] + 1) % n
        } else {
            (m[k] + n - 1) % n
        };
        self.index(m)
    }

    /// `h^d Σ u`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        let s: CompensatedSum = u.iter().copied().collect();
        s.value() * self.cell_volume()
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        let s: CompensatedSum = u.iter().copied().collect();
        s.value() / u.len() as f64
    }

    pub fn subtract_mean(&self, u: &mut [f64]) {
        let m = self.mean(u);
        u.iter_mut().for_each(|v| *v -= m);
    }

    /// Discrete `L²` norm.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        (u.iter().map(|v| v * v).sum::<f64>() * self.cell_volume()).sqrt()
    }

    /// Discrete `H¹` norm built from forward differences.
    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        let mut grad = 0.0;
        for k in 0..self.dim {
            for idx in 0..self.len() {
                let d = (u[self.shift(idx, k, true)] - u[idx]) / self.h;
                grad += d * d;
            }
        }
        let l2 = self.l2_norm(u);
        (l2 * l2 + grad * self.cell_volume()).sqrt()
    }

    /// Fills `f(multi-index)` over all nodes.
    pub fn tabulate<F: FnMut([usize; 2]) -> f64>(&self, mut f: F) -> Vec<f64> {
        (0..self.len())
            .map(|idx| f(self.multi_index(idx)))
            .collect()
    }
}

/// Discrete `w ↦ div_h(A (∇_h w + s))` on a periodic grid.
#[derive(Debug, Clone)]
pub struct DivForm {
    grid: PeriodicGrid,
    edge: Vec<Vec<f64>>,
    cross: Option<Vec<f64>>,
}

impl DivForm {
    pub fn new(grid: PeriodicGrid, edge: Vec<Vec<f64>>, cross: Option<Vec<f64>>) -> Result<Self> {
        if edge.len() != grid.dim() || edge.iter().any(|e| e.len() != grid.len()) {
            return Err(invalid("edge coefficient arrays do not match the grid"));
        }
        if let Some(c) = &cross {
            if grid.dim() != 2 || c.len() != grid.len() {
                return Err(invalid(
                    "cross coefficient requires a 2D grid of matching size",
                ));
            }
        }
        let cross = cross.filter(|c| c.iter().any(|&v| v != 0.0));
        Ok(DivForm { grid, edge, cross })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn edge(&self, k: usize) -> &[f64] {
        &self.edge[k]
    }

    pub fn cross(&self) -> Option<&[f64]> {
        self.cross.as_deref()
    }

    /// `out = div_h(A (∇_h w + s))`.
    pub fn apply(&self, w: &[f64], s: &[f64], out: &mut [f64]) {
        apply_edges(&self.grid, &self.edge, w, s, out);
        if let Some(c) = &self.cross {
            add_cross(&self.grid, c, w, s, out);
        }
    }

    /// Diagonal of `-div_h A ∇_h`.
    pub fn neg_diagonal(&self) -> Vec<f64> {
        let h2 = self.grid.h * self.grid.h;
        (0..self.grid.len())
            .map(|idx| {
                (0..self.grid.dim())
                    .map(|k| {
                        (self.edge[k][idx] + self.edge[k][self.grid.shift(idx, k, false)]) / h2
                    })
                    .sum()
            })
            .collect()
    }

    /// Edge fluxes `a_e (δ_k w / h + s_k)` in direction `k`.
    pub fn edge_flux(&self, w: &[f64], s: &[f64], k: usize) -> Vec<f64> {
        let g = &self.grid;
        (0..g.len())
            .map(|idx| self.edge[k][idx] * ((w[g.shift(idx, k, true)] - w[idx]) / g.h + s[k]))
            .collect()
    }

    /// Node-centred cross flux `A_12 (D_l w + s_l)` entering flux component
    /// `k`, where `l` is the other axis.
    pub fn cross_flux(&self, w: &[f64], s: &[f64], k: usize) -> Option<Vec<f64>> {
        let c = self.cross.as_ref()?;
        let g = &self.grid;
        let l = 1 - k;
        Some(
            (0..g.len())
                .map(|idx| {
                    let d = (w[g.shift(idx, l, true)] - w[g.shift(idx, l, false)]) / (2.0 * g.h);
                    c[idx] * (d + s[l])
                })
                .collect(),
        )
    }

    /// `⟨u, v⟩ = h^d Σ u v`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let s: CompensatedSum = u.iter().zip(v).map(|(a, b)| a * b).collect();
        s.value() * self.grid.cell_volume()
    }
}

/// `out = div_h(edge (∇_h w + s))` for an arbitrary set of edge coefficients.
pub fn apply_edges(grid: &PeriodicGrid, edge: &[Vec<f64>], w: &[f64], s: &[f64], out: &mut [f64]) {
    let n0 = grid.n[0];
    let n1 = grid.n[1];
    let h = grid.h;
    let inv_h2 = 1.0 / (h * h);
    let hs0 = h * s[0];
    let a0 = &edge[0];
    if grid.dim == 1 {
        for i in 0..n0 {
            let ip = if i + 1 == n0 { 0 } else { i + 1 };
            let im = if i == 0 { n0 - 1 } else { i - 1 };
            let fp = a0[i] * (w[ip] - w[i] + hs0);
            let fm = a0[im] * (w[i] - w[im] + hs0);
            out[i] = (fp - fm) * inv_h2;
        }
        return;
    }
    let hs1 = h * s[1];
    let a1 = &edge[1];
    for j in 0..n1 {
        let row = j * n0;
        let up = if j + 1 == n1 { 0 } else { row + n0 };
        let down = if j == 0 { (n1 - 1) * n0 } else { row - n0 };
        for i in 0..n0 {
            let c = row + i;
            let ip = if i + 1 == n0 { row } else { c + 1 };
            let im = if i == 0 { row + n0 - 1 } else { c - 1 };
            let jp = up + i;
            let jm = down + i;
            let wc = w[c];
            let f = a0[c] * (w[ip] - wc + hs0) - a0[im] * (wc - w[im] + hs0)
                + a1[c] * (w[jp] - wc + hs1)
                - a1[jm] * (wc - w[jm] + hs1);
            out[c] = f * inv_h2;
        }
    }
}

fn add_cross(grid: &PeriodicGrid, c: &[f64], w: &[f64], s: &[f64], out: &mut [f64]) {
    let h2 = 2.0 * grid.h;
    let n = grid.len();
    // g_k = A12 (D_l w + s_l), then out += D_k g_k
    let mut g = [vec![0.0; n], vec![0.0; n]];
    for idx in 0..n {
        let d1 = (w[grid.shift(idx, 1, true)] - w[grid.shift(idx, 1, false)]) / h2;
        let d0 = (w[grid.shift(idx, 0, true)] - w[grid.shift(idx, 0, false)]) / h2;
        g[0][idx] = c[idx] * (d1 + s[1]);
        g[1][idx] = c[idx] * (d0 + s[0]);
    }
    for idx in 0..n {
        out[idx] += (g[0][grid.shift(idx, 0, true)] - g[0][grid.shift(idx, 0, false)]) / h2
            + (g[1][grid.shift(idx, 1, true)] - g[1][grid.shift(idx, 1, false)]) / h2;
    }
}

/// One leap-frog step `next = 2 cur - prev + dt² (L_s cur + f)`. `scratch`
/// receives `L_s cur`.
pub fn leapfrog_step(
    op: &DivForm,
    prev: &[f64],
    cur: &[f64],
    next: &mut [f64],
    dt2: f64,
    s: &[f64],
    forcing: Option<&[f64]>,
    scratch: &mut [f64],
) {
    op.apply(cur, s, scratch);
    match forcing {
        Some(f) => {
            for i in 0..next.len() {
                next[i] = 2.0 * cur[i] - prev[i] + dt2 * (scratch[i] + f[i]);
            }
        }
        None => {
            for i in 0..next.len() {
                next[i] = 2.0 * cur[i] - prev[i] + dt2 * scratch[i];
            }
        }
    }
}

/// Number of time steps of size at most `cfl · h / √c2` covering `horizon`.
/// Both arguments are in the same (possibly rescaled) units.
pub fn time_steps(horizon: f64, h: f64, cfl: f64, c2: f64) -> usize {
    let bound = cfl * h / c2.sqrt();
    ((horizon / bound) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn uniform(dim: usize, n: usize, a: f64) -> DivForm {
        let g = PeriodicGrid::new(dim, n, 1.0 / n as f64).unwrap();
        DivForm::new(g, vec![vec![a; g.len()]; dim], None).unwrap()
    }

    #[test]
    fn laplacian_of_a_fourier_mode() {
        let n = 64;
        let op = uniform(2, n, 1.0);
        let g = *op.grid();
        let w = g.tabulate(|[i, j]| {
            (2.0 * PI * i as f64 / n as f64).sin() * (2.0 * PI * j as f64 / n as f64).cos()
        });
        let mut out = vec![0.0; g.len()];
        op.apply(&w, &[0.0, 0.0], &mut out);
        let lam = 2.0 * (4.0 / (g.h() * g.h())) * (PI / n as f64).sin().powi(2);
        for i in 0..g.len() {
            assert_abs_diff_eq!(out[i], -lam * w[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_coefficient_ignores_slope() {
        let op = uniform(2, 8, 2.0);
        let w = vec![0.0; 64];
        let mut out = vec![1.0; 64];
        op.apply(&w, &[0.3, -1.2], &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn operator_is_symmetric_with_cross_terms() {
        let n = 12;
        let g = PeriodicGrid::new(2, n, 1.0 / n as f64).unwrap();
        let e0 = g.tabulate(|[i, j]| 1.0 + 0.3 * (i as f64).sin() + 0.1 * j as f64);
        let e1 = g.tabulate(|[i, j]| 2.0 + 0.2 * (j as f64 * 0.7).cos() + 0.05 * i as f64);
        let c = g.tabulate(|[i, j]| 0.2 * ((i + 2 * j) as f64).sin());
        let op = DivForm::new(g, vec![e0, e1], Some(c)).unwrap();
        let u = g.tabulate(|[i, j]| ((3 * i + j) as f64 * 0.37).sin());
        let v = g.tabulate(|[i, j]| ((i + 5 * j) as f64 * 0.11).cos());
        let mut lu = vec![0.0; g.len()];
        let mut lv = vec![0.0; g.len()];
        op.apply(&u, &[0.0, 0.0], &mut lu);
        op.apply(&v, &[0.0, 0.0], &mut lv);
        assert_abs_diff_eq!(op.inner(&lu, &v), op.inner(&u, &lv), epsilon = 1e-10);
    }

    #[test]
    fn norms_and_means() {
        let g = PeriodicGrid::new(1, 100, 0.01).unwrap();
        let u = g.tabulate(|[i, _]| (2.0 * PI * i as f64 * 0.01).sin() + 3.0);
        assert_abs_diff_eq!(g.mean(&u), 3.0, epsilon = 1e-14);
        let mut v = u.clone();
        g.subtract_mean(&mut v);
        assert_abs_diff_eq!(g.l2_norm(&v), (0.5f64).sqrt(), epsilon = 1e-12);
        assert!(g.h1_norm(&v) > g.l2_norm(&v));
    }

    #[test]
    fn step_count_respects_bound() {
        let n = time_steps(1.0, 0.01, 0.5, 4.0);
        assert!(1.0 / n as f64 <= 0.5 * 0.01 / 2.0 + 1e-15);
        assert_eq!(time_steps(1.0, 0.01, 0.5, 1.0), 200);
    }
}
