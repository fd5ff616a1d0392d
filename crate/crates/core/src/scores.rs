//! Score functions of center-outward ranks and signs, their moment matrices
//! and the rank-based cross-covariance matrices built from them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::center_outward::{CenterOutwardMap, Grid};
use crate::distributions::chi2_quantile;
use crate::error::{arg, dim, Error, Result};
use crate::innovations::SimRng;
use crate::linalg::{identity, vec_of};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Sign,
    Spearman,
    Vdw,
    Custom,
}

impl ScoreKind {
    pub const NAMED: [ScoreKind; 3] = [ScoreKind::Sign, ScoreKind::Spearman, ScoreKind::Vdw];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Sign => "sign",
            ScoreKind::Spearman => "spearman",
            ScoreKind::Vdw => "vdw",
            ScoreKind::Custom => "custom",
        }
    }

    /// Radial factor `g(r)` such that `J(r u) = g(r) u` for `0 < r < 1`.
    fn radial(self, r: f64, d: usize) -> f64 {
        match self {
            ScoreKind::Sign => 1.0,
            ScoreKind::Spearman => r,
            ScoreKind::Vdw => chi2_quantile(r, d as f64).sqrt(),
            ScoreKind::Custom => unreachable!("custom scores have no radial form"),
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sign" => Ok(ScoreKind::Sign),
            "spearman" => Ok(ScoreKind::Spearman),
            "vdw" | "van-der-waerden" => Ok(ScoreKind::Vdw),
            other => arg(format!("unknown score kind '{other}' (expected sign, spearman or vdw)")),
        }
    }
}

/// A score function on the open unit ball.
pub type ScoreFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Which member of the score pair to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreSide {
    J1,
    J2,
}

/// A pair of score functions `(J_1, J_2)` with the moment matrix
/// `D = E[J_2 J_2'] (x) E[J_1 J_1']` under the spherical uniform law.
#[derive(Clone)]
pub struct ScoreSpec {
    kind: ScoreKind,
    d: usize,
    j1: Option<ScoreFn>,
    j2: Option<ScoreFn>,
    d_matrix: DMatrix<f64>,
    d_se: Option<DMatrix<f64>>,
    mean_zero: bool,
}

impl fmt::Debug for ScoreSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreSpec")
            .field("kind", &self.kind)
            .field("d", &self.d)
            .field("d_matrix", &self.d_matrix)
            .field("mean_zero", &self.mean_zero)
            .finish()
    }
}

impl ScoreSpec {
    /// Matched sign, Spearman or van der Waerden scores in dimension `d`.
    pub fn named(kind: ScoreKind, d: usize) -> Result<Self> {
        Ok(ScoreSpec { kind, d, j1: None, j2: None, d_matrix: score_moments(kind, d)?, d_se: None, mean_zero: true })
    }

    /// Arbitrary scores; `D` and the mean condition are estimated from
    /// `draws` spherical uniform samples.
    pub fn custom(d: usize, j1: ScoreFn, j2: ScoreFn, draws: usize, seed: u64) -> Result<Self> {
        let est = estimate_moments(&*j1, &*j2, d, draws, seed)?;
        let within =
            |m: &DVector<f64>, se: &DVector<f64>| m.iter().zip(se.iter()).all(|(m, s)| m.abs() <= 4.0 * s + 1e-12);
        let mean_zero = within(&est.mean1, &est.mean1_se) && within(&est.mean2, &est.mean2_se);
        Ok(ScoreSpec {
            kind: ScoreKind::Custom,
            d,
            j1: Some(j1),
            j2: Some(j2),
            d_matrix: est.d_hat,
            d_se: Some(est.se),
            mean_zero,
        })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d_matrix
    }

    /// Monte Carlo standard errors of `D` for custom scores.
    pub fn d_se(&self) -> Option<&DMatrix<f64>> {
        self.d_se.as_ref()
    }

    pub fn mean_zero(&self) -> bool {
        self.mean_zero
    }

    /// `J(x)` for a point `x` of the open unit ball; zero at the origin.
    pub fn eval_point(&self, x: &[f64], side: ScoreSide) -> Vec<f64> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return vec![0.0; x.len()];
        }
        match self.kind {
            ScoreKind::Custom => {
                let f = match side {
                    ScoreSide::J1 => self.j1.as_ref(),
                    ScoreSide::J2 => self.j2.as_ref(),
                };
                f.expect("custom scores carry both functions")(x)
            }
            kind => {
                let g = kind.radial(r, self.d) / r;
                x.iter().map(|v| g * v).collect()
            }
        }
    }
}

/// `J(rank / (n_R + 1) * sign)`; the origin (rank 0) scores zero.
pub fn score_eval(spec: &ScoreSpec, rank: usize, sign: &[f64], n_r: usize, side: ScoreSide) -> Result<DVector<f64>> {
    if rank > n_r {
        return arg(format!("rank {rank} outside 0..={n_r}"));
    }
    if sign.len() != spec.d {
        return dim(format!("sign has length {}, expected {}", sign.len(), spec.d));
    }
    if rank == 0 {
        return Ok(DVector::zeros(spec.d));
    }
    let scale = rank as f64 / (n_r + 1) as f64;
    let x: Vec<f64> = sign.iter().map(|s| s * scale).collect();
    Ok(DVector::from_vec(spec.eval_point(&x, side)))
}

/// Closed-form `D` for the named scores: `I/d^2` (sign), `I/(9 d^2)`
/// (Spearman) and `I` (van der Waerden), all `d^2 x d^2`.
pub fn score_moments(kind: ScoreKind, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 {
        return arg("dimension must be positive");
    }
    let dd = (d * d) as f64;
    let c = match kind {
        ScoreKind::Sign => 1.0 / dd,
        ScoreKind::Spearman => 1.0 / (9.0 * dd),
        ScoreKind::Vdw => 1.0,
        ScoreKind::Custom => return arg("custom scores need Monte Carlo moments (ScoreSpec::custom)"),
    };
    Ok(identity(d * d) * c)
}

/// Monte Carlo estimate of `D` together with entrywise standard errors and
/// the score means.
#[derive(Clone, Debug)]
pub struct MomentEstimate {
    pub d_hat: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub mean1: DVector<f64>,
    pub mean1_se: DVector<f64>,
    pub mean2: DVector<f64>,
    pub mean2_se: DVector<f64>,
    pub draws: usize,
}

/// Draws from the spherical uniform law: uniform direction times an
/// independent uniform radius on `(0, 1)`.
pub fn draw_spherical_uniform(rng: &mut SimRng, out: &mut [f64]) {
    loop {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r: f64 = rng.random();
            out.iter_mut().for_each(|x| *x *= r / norm);
            return;
        }
    }
}

/// Estimates `D = E[v v']` with `v = J_2(U_2) (x) J_1(U_1)` for independent
/// spherical uniform `U_1`, `U_2`.
pub fn estimate_moments(
    j1: &(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync),
    j2: &(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync),
    d: usize,
    draws: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if d == 0 || draws < 2 {
        return arg("moment estimation needs d >= 1 and at least 2 draws");
    }
    let dd = d * d;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut u1 = vec![0.0; d];
    let mut u2 = vec![0.0; d];
    let mut sum = DMatrix::<f64>::zeros(dd, dd);
    let mut sum_sq = DMatrix::<f64>::zeros(dd, dd);
    let mut m1 = DVector::<f64>::zeros(d);
    let mut m1sq = DVector::<f64>::zeros(d);
    let mut m2 = DVector::<f64>::zeros(d);
    let mut m2sq = DVector::<f64>::zeros(d);
    let mut v = vec![0.0; dd];
    for _ in 0..draws {
        draw_spherical_uniform(&mut rng, &mut u1);
        draw_spherical_uniform(&mut rng, &mut u2);
        let a = j1(&u1);
        let b = j2(&u2);
        if a.len() != d || b.len() != d {
            return dim("score function returned a vector of the wrong length");
        }
        // vec(a b') = b (x) a
        for (q, bq) in b.iter().enumerate() {
            for (p, ap) in a.iter().enumerate() {
                v[q * d + p] = bq * ap;
            }
        }
        for c in 0..dd {
            for r in 0..dd {
                let x = v[r] * v[c];
                sum[(r, c)] += x;
                sum_sq[(r, c)] += x * x;
            }
        }
        for k in 0..d {
            m1[k] += a[k];
            m1sq[k] += a[k] * a[k];
            m2[k] += b[k];
            m2sq[k] += b[k] * b[k];
        }
    }
    let nf = draws as f64;
    let se_of = |s: f64, s2: f64| {
        let mean = s / nf;
        let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
        (var / nf).sqrt()
    };
    Ok(MomentEstimate {
        d_hat: &sum / nf,
        se: DMatrix::from_fn(dd, dd, |r, c| se_of(sum[(r, c)], sum_sq[(r, c)])),
        mean1: &m1 / nf,
        mean1_se: DVector::from_fn(d, |k, _| se_of(m1[k], m1sq[k])),
        mean2: &m2 / nf,
        mean2_se: DVector::from_fn(d, |k, _| se_of(m2[k], m2sq[k])),
        draws,
    })
}

/// Scores of every observation as the rows of an `n x d` matrix.
pub fn score_matrix(
    spec: &ScoreSpec,
    ranks: &[usize],
    signs: &DMatrix<f64>,
    n_r: usize,
    side: ScoreSide,
) -> Result<DMatrix<f64>> {
    let (n, d) = signs.shape();
    if ranks.len() != n || d != spec.d {
        return dim("ranks and signs do not match the score dimension");
    }
    if let Some(r) = ranks.iter().find(|&&r| r > n_r) {
        return arg(format!("rank {r} outside 0..={n_r}"));
    }
    let mut out = DMatrix::zeros(n, d);
    if spec.kind == ScoreKind::Custom {
        let mut x = vec![0.0; d];
        for t in 0..n {
            if ranks[t] == 0 {
                continue;
            }
            let scale = ranks[t] as f64 / (n_r + 1) as f64;
            for k in 0..d {
                x[k] = signs[(t, k)] * scale;
            }
            let j = spec.eval_point(&x, side);
            for k in 0..d {
                out[(t, k)] = j[k];
            }
        }
    } else {
        let factors: Vec<f64> =
            (0..=n_r).map(|r| if r == 0 { 0.0 } else { spec.kind.radial(r as f64 / (n_r + 1) as f64, d) }).collect();
        for t in 0..n {
            let g = factors[ranks[t]];
            for k in 0..d {
                out[(t, k)] = g * signs[(t, k)];
            }
        }
    }
    Ok(out)
}

/// `(J_1, J_2)` score matrices of a center-outward map.
pub fn map_scores(spec: &ScoreSpec, map: &CenterOutwardMap) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let j1 = score_matrix(spec, &map.ranks, &map.signs, map.n_r, ScoreSide::J1)?;
    let j2 = if spec.kind == ScoreKind::Custom {
        score_matrix(spec, &map.ranks, &map.signs, map.n_r, ScoreSide::J2)?
    } else {
        j1.clone()
    };
    Ok((j1, j2))
}

/// Scores at every gridpoint, rows in grid order.
pub fn grid_scores(spec: &ScoreSpec, grid: &Grid, side: ScoreSide) -> DMatrix<f64> {
    let (n, d) = (grid.n(), grid.d());
    let mut out = DMatrix::zeros(n, d);
    for idx in 0..n {
        let j = spec.eval_point(grid.point(idx), side);
        for k in 0..d {
            out[(idx, k)] = j[k];
        }
    }
    out
}

/// The rank-based cross-covariance `(n - i)^{-1} sum_{t>i} J1_t J2_{t-i}'`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankCrossCov {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
    pub n_terms: usize,
}

pub fn rank_cross_cov(j1: &DMatrix<f64>, j2: &DMatrix<f64>, lag: usize) -> Result<RankCrossCov> {
    let (n, d) = j1.shape();
    if j2.shape() != (n, d) {
        return dim("score matrices differ in shape");
    }
    if lag < 1 || lag >= n {
        return arg(format!("lag {lag} outside 1..={}", n.saturating_sub(1)));
    }
    let mut m = DMatrix::zeros(d, d);
    for t in lag..n {
        for b in 0..d {
            let y = j2[(t - lag, b)];
            for a in 0..d {
                m[(a, b)] += j1[(t, a)] * y;
            }
        }
    }
    let n_terms = n - lag;
    m /= n_terms as f64;
    Ok(RankCrossCov { lag, matrix: m, n_terms })
}

/// Cross-covariances for lags `1..=m`.
pub fn rank_cross_covs(j1: &DMatrix<f64>, j2: &DMatrix<f64>, m: usize) -> Result<Vec<RankCrossCov>> {
    (1..=m).map(|i| rank_cross_cov(j1, j2, i)).collect()
}

/// `n^{-1/2} ((n - i)^{1/2} vec G_i)_{i=1..m}`, stacked in lag order.
pub fn stack_cross_cov(covs: &[RankCrossCov], n: usize) -> Result<DVector<f64>> {
    let Some(first) = covs.first() else {
        return Ok(DVector::zeros(0));
    };
    let d = first.matrix.nrows();
    let dd = d * d;
    let mut out = DVector::zeros(covs.len() * dd);
    for (pos, c) in covs.iter().enumerate() {
        if c.lag != pos + 1 || c.n_terms != n - c.lag {
            return arg("cross-covariances must cover lags 1..m of a series of length n");
        }
        let w = (c.n_terms as f64 / n as f64).sqrt();
        out.rows_mut(pos * dd, dd).copy_from(&(vec_of(&c.matrix) * w));
    }
    Ok(out)
}

/// Inverse of [`stack_cross_cov`].
pub fn unstack_cross_cov(stacked: &DVector<f64>, n: usize, d: usize) -> Result<Vec<RankCrossCov>> {
    let dd = d * d;
    if dd == 0 || !stacked.len().is_multiple_of(dd) {
        return dim("stacked length is not a multiple of d^2");
    }
    let m = stacked.len() / dd;
    if m >= n {
        return arg("more lags than observations");
    }
    Ok((1..=m)
        .map(|i| {
            let w = (n as f64 / (n - i) as f64).sqrt();
            let block = stacked.rows((i - 1) * dd, dd) * w;
            RankCrossCov { lag: i, matrix: DMatrix::from_column_slice(d, d, block.as_slice()), n_terms: n - i }
        })
        .collect())
}
