//! Periodic cell problems and the homogenized tensor.

use crate::error::{invalid, Error, Result};
use crate::grid::{DivForm, PeriodicGrid};
use crate::media::{eigen_range, CoefficientField, Mat};
use crate::upscale::{FluxSource, FluxVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOptions {
    /// Offset of node 0 in the unit cell.
    pub phase: [f64; 2],
    /// Stopping tolerance on the discrete `L²` residual, relative to
    /// `max(1, ‖b‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            phase: [0.0; 2],
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Zero-mean correctors `χ_ℓ`, one per axis.
    pub correctors: Vec<Vec<f64>>,
    pub n: usize,
    pub dim: usize,
    /// Largest final residual over the correctors.
    pub residual: f64,
    pub iterations: usize,
    /// Tensor assembled from the correctors.
    pub a0: Mat,
    pub options: CellOptions,
}

impl CellSolution {
    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid::new(self.dim, self.n, 1.0 / self.n as f64).expect("valid cell grid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedTensor {
    pub a0: Mat,
    pub dim: usize,
    pub x: Vec<f64>,
    /// Cell grid size used.
    pub n: usize,
    pub tol: f64,
}

/// Coefficients of the cell operator at slow point `x`: edge values sampled
/// at edge midpoints and the cross entry at nodes.
pub fn cell_operator(
    field: &CoefficientField,
    x: &[f64],
    n: usize,
    phase: [f64; 2],
) -> Result<DivForm> {
    let dim = field.dim();
    let h = 1.0 / n as f64;
    let grid = PeriodicGrid::new(dim, n, h)?;
    let node =
        |m: [usize; 2]| -> [f64; 2] { [phase[0] + m[0] as f64 * h, phase[1] + m[1] as f64 * h] };
    let mut edge = Vec::with_capacity(dim);
    for k in 0..dim {
        edge.push(grid.tabulate(|m| {
            let mut y = node(m);
            y[k] += 0.5 * h;
            field.eval(x, &y[..dim])[k][k]
        }));
    }
    let cross = (dim == 2).then(|| grid.tabulate(|m| field.eval(x, &node(m))[0][1]));
    DivForm::new(grid, edge, cross)
}

/// Solves `-L u = b` on the zero-mean subspace by Jacobi-preconditioned CG.
pub fn solve_periodic(
    op: &DivForm,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let g = op.grid();
    let n = g.len();
    let zero = vec![0.0; g.dim()];
    let mut rhs = b.to_vec();
    g.subtract_mean(&mut rhs);
    let target = tol * g.l2_norm(&rhs).max(1.0);
    let diag = op.neg_diagonal();
    let mut x = vec![0.0; n];
    let mut r = rhs;
    let mut res = g.l2_norm(&r);
    if res <= target {
        return Ok((x, res, 0));
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        g.subtract_mean(&mut z);
        z
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = op.inner(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&p, &zero, &mut ap);
        ap.iter_mut().for_each(|v| *v = -*v);
        let alpha = rz / op.inner(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = g.l2_norm(&r);
        if res <= target {
            // recompute the true residual once to guard against drift
            op.apply(&x, &zero, &mut ap);
            let mut true_r: Vec<f64> = (0..n).map(|i| b[i] + ap[i]).collect();
            g.subtract_mean(&mut true_r);
            g.subtract_mean(&mut x);
            return Ok((x, g.l2_norm(&true_r), it));
        }
        z = precond(&r);
        let rz_new = op.inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// `A⁰_{kl}` from the correctors: the cell mean of flux component `k` for
/// the field `y_l + χ_l`.
pub fn assemble_tensor(op: &DivForm, correctors: &[Vec<f64>]) -> Mat {
    let g = op.grid();
    let d = g.dim();
    let mut a0 = [[0.0; 2]; 2];
    for (l, chi) in correctors.iter().enumerate() {
        let mut s = vec![0.0; d];
        s[l] = 1.0;
        for k in 0..d {
            let mut total = g.mean(&op.edge_flux(chi, &s, k));
            if let Some(c) = op.cross_flux(chi, &s, k) {
                total += g.mean(&c);
            }
            a0[k][l] = total;
        }
    }
    if d == 2 {
        let off = 0.5 * (a0[0][1] + a0[1][0]);
        a0[0][1] = off;
        a0[1][0] = off;
    }
    a0
}

/// Cell problem on an `n^d` grid with explicit phase and tolerance.
pub fn solve_cell_with(
    field: &CoefficientField,
    x: &[f64],
    n: usize,
    opts: CellOptions,
) -> Result<CellSolution> {
    if n < 4 {
        return Err(invalid(format!(
            "cell grid needs at least 4 points per axis, got {n}"
        )));
    }
    if x.len() != field.dim() {
        return Err(invalid(format!(
            "point has {} coordinates, field is {}-dimensional",
            x.len(),
            field.dim()
        )));
    }
    let op = cell_operator(field, x, n, opts.phase)?;
    let d = field.dim();
    let g = *op.grid();
    let mut correctors = Vec::with_capacity(d);
    let mut residual: f64 = 0.0;
    let mut iterations = 0;
    for l in 0..d {
        let mut s = vec![0.0; d];
        s[l] = 1.0;
        let zero = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        op.apply(&zero, &s, &mut b);
        let (chi, res, it) = solve_periodic(&op, &b, opts.tol, opts.max_iter)?;
        residual = residual.max(res);
        iterations = iterations.max(it);
        correctors.push(chi);
    }
    let a0 = assemble_tensor(&op, &correctors);
    Ok(CellSolution {
        correctors,
        n,
        dim: d,
        residual,
        iterations,
        a0,
        options: opts,
    })
}

/// Cell problem with default options; requires `n >= 32`.
pub fn solve_cell(field: &CoefficientField, x: &[f64], n: usize) -> Result<CellSolution> {
    if n < 32 {
        return Err(invalid(format!("cell grid must have n >= 32, got {n}")));
    }
    solve_cell_with(field, x, n, CellOptions::default())
}

pub fn homogenized_tensor_with(
    field: &CoefficientField,
    x: &[f64],
    n: usize,
    opts: CellOptions,
) -> Result<HomogenizedTensor> {
    let sol = solve_cell_with(field, x, n, opts)?;
    let (lo, hi) = eigen_range(&sol.a0, field.dim());
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            x: x.to_vec(),
            y: vec![],
            min_eig: lo,
        });
    }
    log::debug!(
        "A0 at {x:?}: eigenvalues [{lo}, {hi}] after {} iterations",
        sol.iterations
    );
    Ok(HomogenizedTensor {
        a0: sol.a0,
        dim: field.dim(),
        x: x.to_vec(),
        n,
        tol: opts.tol,
    })
}

pub fn homogenized_tensor(
    field: &CoefficientField,
    x: &[f64],
    n: usize,
) -> Result<HomogenizedTensor> {
    if n < 32 {
        return Err(invalid(format!("cell grid must have n >= 32, got {n}")));
    }
    homogenized_tensor_with(field, x, n, CellOptions::default())
}

/// `F̂ = A⁰ s`.
pub fn homogenized_flux(t: &HomogenizedTensor, s: &[f64]) -> FluxVector {
    let d = t.dim;
    let value = (0..d)
        .map(|k| (0..d).map(|l| t.a0[k][l] * s[l]).sum())
        .collect();
    FluxVector {
        value,
        r0: t.x.clone(),
        slope: s.to_vec(),
        source: FluxSource::Reference { n: t.n },
    }
}

/// Harmonic mean of `f` over the unit interval by the periodic midpoint rule.
pub fn harmonic_mean<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    let s: f64 = (0..n).map(|i| 1.0 / f((i as f64 + 0.5) / n as f64)).sum();
    n as f64 / s
}

/// Arithmetic mean of `f` over the unit interval by the periodic midpoint rule.
pub fn arithmetic_mean<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
}
