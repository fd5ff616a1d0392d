//! Exact square linear assignment by shortest augmenting paths.
//!
//! Jonker–Volgenant: column reduction, reduction transfer and two rounds of
//! augmenting row reduction build a partial matching with feasible column
//! duals; every still-free row is then matched by a Dijkstra-type shortest
//! augmenting path search over reduced costs. The result is an exact
//! optimum.
//!
//! Ties are broken deterministically by index order (column reduction scans
//! columns from last to first and rows from first to last; the path search
//! keeps columns in a fixed list), so the same input always yields the same
//! assignment.

use crate::error::{arg, dim, Error, Result};

/// An optimal matching of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `col_for_row[i]` is the column matched to row `i`.
    pub col_for_row: Vec<usize>,
    /// Sum of `cost[i][col_for_row[i]]` in row order.
    pub total_cost: f64,
    /// Column dual variables at the optimum, usable for warm starts.
    pub col_duals: Vec<f64>,
}

impl Assignment {
    pub fn row_for_col(&self) -> Vec<usize> {
        let mut out = vec![0; self.col_for_row.len()];
        for (i, &j) in self.col_for_row.iter().enumerate() {
            out[j] = i;
        }
        out
    }
}

const NONE: usize = usize::MAX;

/// Minimizes `sum_i cost[i * n + col(i)]` over all permutations `col`.
///
/// `cost` is a row-major `n x n` matrix of finite values.
pub fn solve(cost: &[f64], n: usize) -> Result<Assignment> {
    check(cost, n)?;
    if n == 1 {
        return Ok(Assignment { col_for_row: vec![0], total_cost: cost[0], col_duals: vec![cost[0]] });
    }
    let mut st = State::new(n);
    st.column_reduction(cost);
    st.row_reduction(cost);
    st.augment(cost);
    Ok(st.finish(cost))
}

/// Like [`solve`], started from the duals and matching of a previous
/// solution of a nearby problem. Rows whose previous column is no longer a
/// reduced-cost minimum are released and re-matched; the result is exact.
pub fn solve_warm(cost: &[f64], n: usize, previous: &Assignment) -> Result<Assignment> {
    check(cost, n)?;
    if previous.col_for_row.len() != n || previous.col_duals.len() != n {
        return dim("warm start has the wrong size");
    }
    if n == 1 {
        return solve(cost, n);
    }
    let mut st = State::new(n);
    st.v.copy_from_slice(&previous.col_duals);
    for i in 0..n {
        let j = previous.col_for_row[i];
        let row = &cost[i * n..(i + 1) * n];
        let own = row[j] - st.v[j];
        let keep = row.iter().zip(&st.v).all(|(c, v)| c - v >= own);
        if keep {
            st.rowsol[i] = j;
            st.colsol[j] = i;
        } else {
            st.free.push(i);
        }
    }
    st.row_reduction(cost);
    st.augment(cost);
    Ok(st.finish(cost))
}

fn check(cost: &[f64], n: usize) -> Result<()> {
    if cost.len() != n * n {
        return dim(format!("cost has {} entries, expected {}", cost.len(), n * n));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    if n == 0 {
        return arg("empty assignment problem");
    }
    Ok(())
}

struct State {
    n: usize,
    rowsol: Vec<usize>,
    colsol: Vec<usize>,
    v: Vec<f64>,
    free: Vec<usize>,
}

impl State {
    fn new(n: usize) -> Self {
        State { n, rowsol: vec![NONE; n], colsol: vec![NONE; n], v: vec![0.0; n], free: Vec::with_capacity(n) }
    }

    fn finish(self, cost: &[f64]) -> Assignment {
        let n = self.n;
        let total_cost = self.rowsol.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        Assignment { col_for_row: self.rowsol, total_cost, col_duals: self.v }
    }

    fn column_reduction(&mut self, cost: &[f64]) {
        let n = self.n;
        let c = |i: usize, j: usize| cost[i * n + j];
        let State { rowsol, colsol, v, free, .. } = self;
        let mut matches = vec![0usize; n];
        // column reduction
        for j in (0..n).rev() {
            let mut min = c(0, j);
            let mut imin = 0;
            for i in 1..n {
                if c(i, j) < min {
                    min = c(i, j);
                    imin = i;
                }
            }
            v[j] = min;
            matches[imin] += 1;
            if matches[imin] == 1 {
                rowsol[imin] = j;
                colsol[j] = imin;
            } else if v[j] < v[rowsol[imin]] {
                let j1 = rowsol[imin];
                rowsol[imin] = j;
                colsol[j] = imin;
                colsol[j1] = NONE;
            } else {
                colsol[j] = NONE;
            }
        }

        // reduction transfer
        for i in 0..n {
            if matches[i] == 0 {
                free.push(i);
            } else if matches[i] == 1 {
                let j1 = rowsol[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        min = min.min(c(i, j) - v[j]);
                    }
                }
                if min.is_finite() {
                    v[j1] -= min;
                }
            }
        }
    }

    fn row_reduction(&mut self, cost: &[f64]) {
        let n = self.n;
        let c = |i: usize, j: usize| cost[i * n + j];
        let State { rowsol, colsol, v, free, .. } = self;
        // augmenting row reduction, two rounds; the inner loop is capped since
        // floating-point near-ties can make it cycle for a long time, and any
        // row left free is handled exactly by the augmentation phase
        for _ in 0..2 {
            let prv = std::mem::take(free);
            let mut queue = prv;
            let mut k = 0;
            let mut budget = 10 * n + 100;
            while k < queue.len() {
                let i = queue[k];
                k += 1;
                if budget == 0 {
                    free.push(i);
                    continue;
                }
                budget -= 1;
                let mut umin = c(i, 0) - v[0];
                let mut j1 = 0;
                let mut j2 = NONE;
                let mut usubmin = f64::INFINITY;
                for j in 1..n {
                    let h = c(i, j) - v[j];
                    if h < usubmin {
                        if h >= umin {
                            usubmin = h;
                            j2 = j;
                        } else {
                            usubmin = umin;
                            umin = h;
                            j2 = j1;
                            j1 = j;
                        }
                    }
                }
                let mut i0 = colsol[j1];
                if umin < usubmin {
                    v[j1] -= usubmin - umin;
                } else if i0 != NONE && j2 != NONE {
                    j1 = j2;
                    i0 = colsol[j2];
                }
                if rowsol[i] != NONE && colsol[rowsol[i]] == i {
                    colsol[rowsol[i]] = NONE;
                }
                rowsol[i] = j1;
                colsol[j1] = i;
                if i0 != NONE {
                    rowsol[i0] = NONE;
                    if umin < usubmin {
                        // retry the displaced row immediately
                        k -= 1;
                        queue[k] = i0;
                    } else {
                        free.push(i0);
                    }
                }
            }
        }
    }

    fn augment(&mut self, cost: &[f64]) {
        let n = self.n;
        let c = |i: usize, j: usize| cost[i * n + j];
        let State { rowsol, colsol, v, free, .. } = self;
        // augmentation
        let mut d = vec![0.0f64; n];
        let mut pred = vec![0usize; n];
        let mut collist: Vec<usize> = (0..n).collect();
        for &freerow in free.iter() {
            for j in 0..n {
                d[j] = c(freerow, j) - v[j];
                pred[j] = freerow;
                collist[j] = j;
            }
            let mut low = 0;
            let mut up = 0;
            let mut last = 0;
            let mut min = 0.0;
            let mut endofpath = NONE;
            while endofpath == NONE {
                if up == low {
                    // new minimum distance level
                    last = low;
                    min = d[collist[up]];
                    up += 1;
                    let first = up;
                    for k in first..n {
                        let j = collist[k];
                        let h = d[j];
                        if h <= min {
                            if h < min {
                                up = low;
                                min = h;
                            }
                            collist[k] = collist[up];
                            collist[up] = j;
                            up += 1;
                        }
                    }
                    for &j in &collist[low..up] {
                        if colsol[j] == NONE {
                            endofpath = j;
                            break;
                        }
                    }
                }
                if endofpath == NONE {
                    let j1 = collist[low];
                    low += 1;
                    let i = colsol[j1];
                    let row = &cost[i * n..(i + 1) * n];
                    let h = row[j1] - v[j1] - min;
                    let mut k = up;
                    while k < n {
                        let j = collist[k];
                        let v2 = row[j] - v[j] - h;
                        if v2 < d[j] {
                            pred[j] = i;
                            if v2 == min {
                                if colsol[j] == NONE {
                                    endofpath = j;
                                    break;
                                }
                                collist[k] = collist[up];
                                collist[up] = j;
                                up += 1;
                            }
                            d[j] = v2;
                        }
                        k += 1;
                    }
                }
            }
            // columns scanned before the final level get their duals updated
            for &j in &collist[..last] {
                v[j] += d[j] - min;
            }
            loop {
                let i = pred[endofpath];
                colsol[endofpath] = i;
                std::mem::swap(&mut endofpath, &mut rowsol[i]);
                if i == freerow {
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_costs() {
        let n = 4;
        let mut cost = vec![1.0; n * n];
        for i in 0..n {
            cost[i * n + (n - 1 - i)] = 0.0;
        }
        let a = solve(&cost, n).unwrap();
        assert_eq!(a.col_for_row, vec![3, 2, 1, 0]);
        assert_eq!(a.total_cost, 0.0);
        assert_eq!(a.row_for_col(), vec![3, 2, 1, 0]);
    }

    #[test]
    fn classic_three_by_three() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve(&cost, 3).unwrap();
        assert_eq!(a.total_cost, 5.0);
        assert_eq!(a.col_for_row, vec![1, 0, 2]);
    }

    #[test]
    fn all_ties_is_deterministic_permutation() {
        let a = solve(&[1.0; 25], 5).unwrap();
        let b = solve(&[1.0; 25], 5).unwrap();
        assert_eq!(a, b);
        let mut seen = a.col_for_row.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn matches_brute_force_on_integer_costs() {
        // small integer costs produce many ties
        let mut state = 12345u64;
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n)
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        ((state >> 33) % 5) as f64
                    })
                    .collect();
                assert_eq!(solve(&cost, n).unwrap().total_cost, brute_force(&cost, n));
            }
        }
    }

    #[test]
    fn warm_start_reaches_the_same_optimum() {
        let mut state = 99u64;
        let mut unif = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in [2usize, 5, 8, 40] {
            let base: Vec<f64> = (0..n * n).map(|_| unif()).collect();
            let first = solve(&base, n).unwrap();
            for scale in [1e-6, 1e-2, 0.3, 5.0] {
                let next: Vec<f64> = base.iter().map(|c| c + scale * unif()).collect();
                let cold = solve(&next, n).unwrap();
                let warm = solve_warm(&next, n, &first).unwrap();
                assert!((cold.total_cost - warm.total_cost).abs() < 1e-12);
                if n <= 8 {
                    assert_eq!(warm.total_cost, brute_force(&next, n));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(solve(&[1.0, 2.0], 2), Err(Error::Dimension(_))));
        assert!(matches!(solve(&[f64::NAN], 1), Err(Error::NonFinite(_))));
        assert!(matches!(solve(&[], 0), Err(Error::Argument(_))));
        let a = solve(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert!(matches!(solve_warm(&[1.0; 9], 3, &a), Err(Error::Dimension(_))));
    }
}
