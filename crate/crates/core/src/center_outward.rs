//! Regular grids in the unit ball and the empirical center-outward
//! distribution function obtained by optimally assigning residuals to
//! gridpoints.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::assignment::{self, Assignment};
use crate::error::{arg, dim, Error, Result};
use crate::innovations::SimRng;

/// `n = n_R n_S + n_0` points: `n_R` radii `r / (n_R + 1)` on each of `n_S`
/// directions, plus `n_0` copies of the origin.
///
/// Point `idx < n_R n_S` lies on radius `idx / n_S + 1` and direction
/// `idx % n_S`; the origins come last.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    d: usize,
    n_r: usize,
    n_s: usize,
    n_0: usize,
    symmetric: bool,
    /// Row-major `n_S x d`.
    directions: Vec<f64>,
    /// Row-major `n x d`.
    points: Vec<f64>,
}

/// Values of `n_R` for which `n_0 = n - n_R floor(n / n_R)` satisfies
/// `n_0 < min(n_R, n_S)`.
pub fn feasible_n_r(n: usize, d: usize) -> Vec<usize> {
    (1..=n)
        .filter(|&n_r| {
            let n_s = n / n_r;
            let n_0 = n - n_r * n_s;
            n_s >= 1 && n_0 < n_r.min(n_s) && (d > 1 || n_s <= 2)
        })
        .collect()
}

/// Default factorization: among feasible `n_R` in `[sqrt(n)/2, 2 sqrt(n)]`
/// (or all feasible values if none lies there), prefer no origin copies,
/// then an even number of directions, then `n_R` closest to `sqrt(n)`.
pub fn auto_n_r(n: usize, d: usize) -> Result<usize> {
    let all = feasible_n_r(n, d);
    if all.is_empty() {
        return arg(format!("no feasible grid factorization for n={n}, d={d}"));
    }
    let root = (n as f64).sqrt();
    let window: Vec<usize> =
        all.iter().copied().filter(|&r| r as f64 >= root / 2.0 && r as f64 <= 2.0 * root).collect();
    let pool = if window.is_empty() { all } else { window };
    let key = |&r: &usize| {
        let n_s = n / r;
        let n_0 = n - r * n_s;
        (n_0, n_s % 2, ((r as f64 - root).abs() * 1e6) as u64, r)
    };
    Ok(pool.into_iter().min_by_key(key).expect("non-empty pool"))
}

/// Builds a grid of `n` points in the unit ball of `R^d`.
///
/// In `d = 2` the directions are equally spaced angles with a seeded
/// rotation offset; in higher dimension they are drawn uniformly on the
/// sphere from the seed, in antipodal pairs when `symmetric`. `symmetric`
/// defaults to `n_S` even.
pub fn make_grid(n: usize, d: usize, n_r: Option<usize>, seed: u64, symmetric: Option<bool>) -> Result<Grid> {
    if n == 0 || d == 0 {
        return arg("grid needs n >= 1 and d >= 1");
    }
    let n_r = match n_r {
        Some(r) => r,
        None => auto_n_r(n, d)?,
    };
    let feasible = feasible_n_r(n, d);
    if !feasible.contains(&n_r) {
        return arg(format!("n_R={n_r} gives an infeasible factorization of n={n}; feasible n_R: {feasible:?}"));
    }
    let n_s = n / n_r;
    let n_0 = n - n_r * n_s;
    let symmetric = symmetric.unwrap_or(n_s.is_multiple_of(2));
    if symmetric && !n_s.is_multiple_of(2) {
        return arg(format!("a symmetric grid needs an even number of directions, got n_S={n_s}"));
    }
    let directions = directions(d, n_s, seed, symmetric);
    Ok(Grid::from_directions(d, n_r, n_s, n_0, symmetric, directions))
}

fn directions(d: usize, n_s: usize, seed: u64, symmetric: bool) -> Vec<f64> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut out = vec![0.0; n_s * d];
    let base = if symmetric { n_s / 2 } else { n_s };
    match d {
        1 => {
            out[..base].fill(1.0);
        }
        2 => {
            let offset: f64 = rng.random::<f64>() * 2.0 * PI / n_s as f64;
            for s in 0..base {
                let a = offset + 2.0 * PI * s as f64 / n_s as f64;
                out[2 * s] = a.cos();
                out[2 * s + 1] = a.sin();
            }
        }
        _ => {
            for s in 0..base {
                let u = &mut out[s * d..(s + 1) * d];
                loop {
                    for x in u.iter_mut() {
                        *x = rng.sample(StandardNormal);
                    }
                    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        u.iter_mut().for_each(|x| *x /= norm);
                        break;
                    }
                }
            }
        }
    }
    if symmetric {
        for s in 0..base {
            for k in 0..d {
                out[(base + s) * d + k] = -out[s * d + k];
            }
        }
    }
    out
}

impl Grid {
    fn from_directions(d: usize, n_r: usize, n_s: usize, n_0: usize, symmetric: bool, directions: Vec<f64>) -> Grid {
        let n = n_r * n_s + n_0;
        let mut points = vec![0.0; n * d];
        for r in 1..=n_r {
            let radius = r as f64 / (n_r + 1) as f64;
            for s in 0..n_s {
                let idx = (r - 1) * n_s + s;
                for k in 0..d {
                    points[idx * d + k] = radius * directions[s * d + k];
                }
            }
        }
        Grid { d, n_r, n_s, n_0, symmetric, directions, points }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n_r * self.n_s + self.n_0
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn n_0(&self) -> usize {
        self.n_0
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn direction(&self, s: usize) -> &[f64] {
        &self.directions[s * self.d..(s + 1) * self.d]
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx * self.d..(idx + 1) * self.d]
    }

    /// Radius index of a gridpoint, 0 for the origin.
    pub fn rank_of(&self, idx: usize) -> usize {
        if idx < self.n_r * self.n_s {
            idx / self.n_s + 1
        } else {
            0
        }
    }

    /// Direction of a gridpoint, `None` for the origin.
    pub fn direction_of(&self, idx: usize) -> Option<&[f64]> {
        (idx < self.n_r * self.n_s).then(|| self.direction(idx % self.n_s))
    }

    pub fn points_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.d, &self.points)
    }

    /// The same grid with every direction mapped to `Q u`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Grid> {
        if q.nrows() != self.d || q.ncols() != self.d {
            return dim(format!("rotation must be {}x{}", self.d, self.d));
        }
        let mut dirs = vec![0.0; self.directions.len()];
        for s in 0..self.n_s {
            let u = DVector::from_column_slice(self.direction(s));
            let w = q * u;
            dirs[s * self.d..(s + 1) * self.d].copy_from_slice(w.as_slice());
        }
        Ok(Grid::from_directions(self.d, self.n_r, self.n_s, self.n_0, self.symmetric, dirs))
    }
}

/// The empirical center-outward distribution function of a residual sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterOutwardMap {
    /// `assignment[t]` is the gridpoint matched to residual `t`.
    pub assignment: Vec<usize>,
    /// `F(Z_t)` as the rows of an `n x d` matrix.
    pub f_values: DMatrix<f64>,
    pub ranks: Vec<usize>,
    /// Unit vectors, or zero rows for residuals sent to the origin.
    pub signs: DMatrix<f64>,
    /// Minimized sum of squared distances.
    pub total_cost: f64,
    pub n_r: usize,
    col_duals: Vec<f64>,
    cost_scale: f64,
}

fn cost_matrix(z: &DMatrix<f64>, grid: &Grid) -> Result<(Vec<f64>, f64)> {
    let (n, d) = z.shape();
    if n != grid.n() {
        return dim(format!("{n} residuals but {} gridpoints", grid.n()));
    }
    if d != grid.d() {
        return dim(format!("residual dimension {d} but grid dimension {}", grid.d()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residuals".into()));
    }
    let max_sq = (0..n).map(|t| z.row(t).norm_squared()).fold(0.0f64, f64::max);
    let scale = if max_sq > 0.0 { 1.0 / max_sq } else { 1.0 };
    let rows: Vec<f64> = crate::varma::to_rows(z);
    let mut cost = vec![0.0; n * n];
    for t in 0..n {
        let zt = &rows[t * d..(t + 1) * d];
        let out = &mut cost[t * n..(t + 1) * n];
        for (j, c) in out.iter_mut().enumerate() {
            let g = grid.point(j);
            let mut s = 0.0;
            for k in 0..d {
                let diff = zt[k] - g[k];
                s += diff * diff;
            }
            *c = s * scale;
        }
    }
    Ok((cost, scale))
}

fn build_map(z: &DMatrix<f64>, grid: &Grid, sol: Assignment, scale: f64) -> CenterOutwardMap {
    let (n, d) = z.shape();
    let mut f_values = DMatrix::zeros(n, d);
    let mut signs = DMatrix::zeros(n, d);
    let mut ranks = Vec::with_capacity(n);
    let mut total_cost = 0.0;
    for (t, &idx) in sol.col_for_row.iter().enumerate() {
        let g = grid.point(idx);
        for k in 0..d {
            f_values[(t, k)] = g[k];
            let diff = z[(t, k)] - g[k];
            total_cost += diff * diff;
        }
        if let Some(u) = grid.direction_of(idx) {
            for k in 0..d {
                signs[(t, k)] = u[k];
            }
        }
        ranks.push(grid.rank_of(idx));
    }
    CenterOutwardMap {
        assignment: sol.col_for_row,
        f_values,
        ranks,
        signs,
        total_cost,
        n_r: grid.n_r(),
        col_duals: sol.col_duals,
        cost_scale: scale,
    }
}

/// Optimal assignment of the rows of `z` (an `n x d` residual matrix) to the
/// gridpoints, minimizing the total squared distance.
pub fn compute_map(z: &DMatrix<f64>, grid: &Grid) -> Result<CenterOutwardMap> {
    let (cost, scale) = cost_matrix(z, grid)?;
    let sol = assignment::solve(&cost, grid.n())?;
    Ok(build_map(z, grid, sol, scale))
}

/// [`compute_map`] warm-started from the map of a nearby residual sample on
/// the same grid. The optimum is exact; among tied optima the one reached
/// may differ from a cold start.
pub fn compute_map_warm(z: &DMatrix<f64>, grid: &Grid, previous: &CenterOutwardMap) -> Result<CenterOutwardMap> {
    let (cost, scale) = cost_matrix(z, grid)?;
    if previous.assignment.len() != grid.n() {
        return dim("warm-start map has the wrong size");
    }
    let ratio = scale / previous.cost_scale;
    let prev = Assignment {
        col_for_row: previous.assignment.clone(),
        total_cost: 0.0,
        col_duals: previous.col_duals.iter().map(|v| v * ratio).collect(),
    };
    let sol = assignment::solve_warm(&cost, grid.n(), &prev)?;
    Ok(build_map(z, grid, sol, scale))
}

/// Ranks `round((n_R + 1) |F|)` and signs `F / |F|` (zero at the origin),
/// recomputed from the stored `F` values.
pub fn ranks_and_signs(map: &CenterOutwardMap) -> (Vec<usize>, DMatrix<f64>) {
    let (n, d) = map.f_values.shape();
    let mut ranks = Vec::with_capacity(n);
    let mut signs = DMatrix::zeros(n, d);
    for t in 0..n {
        let f = map.f_values.row(t);
        let norm = f.norm();
        ranks.push(((map.n_r + 1) as f64 * norm).round() as usize);
        if norm > 0.0 {
            for k in 0..d {
                signs[(t, k)] = f[k] / norm;
            }
        }
    }
    (ranks, signs)
}
