//! Portmanteau statistics: the classical pseudo-Gaussian statistic on
//! residual cross-covariances and the center-outward rank-based statistic
//! with its projection-corrected weighting.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::center_outward::Grid;
use crate::distributions::chi2_sf;
use crate::error::{arg, dim, Result};
use crate::estimation::{rank_fit, rank_state, KMatrix, QmleFit, REstimate, RankFit, RankState};
use crate::linalg::{identity, inverse, kron, pinv, sym_sqrt, vec_of, SVD_RELATIVE_CUTOFF};
use crate::scores::{stack_cross_cov, ScoreKind, ScoreSpec};
use crate::varma::{coeff_blocks, lag_product, residuals, to_rows, ModelOrder, SeriesData, ThetaVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Gaussian,
    Rank,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Gaussian => "gaussian",
            TestMethod::Rank => "rank",
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub scores: Option<ScoreKind>,
    pub statistic: f64,
    pub m: usize,
    pub df: usize,
    pub p_value: f64,
    /// Quadratic-form contribution of each lag.
    pub per_lag: Vec<f64>,
    /// Numerical rank of the pseudo-inverted weighting (rank tests only).
    pub mp_rank: Option<usize>,
    pub warnings: Vec<String>,
}

impl TestReport {
    pub const CSV_HEADER: &'static str = "method,scores,m,df,stat,pvalue";

    /// `method,scores,m,df,stat,pvalue`
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method,
            self.scores.map(|s| s.name()).unwrap_or(""),
            self.m,
            self.df,
            self.statistic,
            self.p_value
        )
    }
}

/// Upper-tail chi-square probability.
pub fn p_value(stat: f64, df: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    chi2_sf(stat, df as f64).clamp(0.0, 1.0)
}

/// `d^2 (m - p - q)`, rejecting non-positive values.
pub fn degrees_of_freedom(order: ModelOrder, m: usize) -> Result<usize> {
    if m <= order.p + order.q {
        return arg(format!("non-positive degrees of freedom: m={m} must exceed p+q={}", order.p + order.q));
    }
    Ok(order.d * order.d * (m - order.p - order.q))
}

/// Classical statistic `sum_i (n-i) vec(C_i)' (S (x) S)^{-1} vec(C_i)` on
/// the raw residual cross-covariances `C_i = (n-i)^{-1} sum Z_t Z_{t-i}'`.
/// With `literal` the cross-covariances are first premultiplied by
/// `S^{-1}`.
pub fn gaussian_stat(series: &SeriesData, fit: &QmleFit, m: usize, literal: bool) -> Result<TestReport> {
    let order = fit.order;
    let df = degrees_of_freedom(order, m)?;
    let n = series.n();
    if m >= n {
        return arg(format!("m={m} must be below n={n}"));
    }
    let res = residuals(series, &fit.theta_hat, order)?;
    let s_inv = inverse(&fit.sigma_hat, "residual covariance")?;
    let rows = to_rows(&res.z);
    let d = order.d;
    let mut per_lag = Vec::with_capacity(m);
    for i in 1..=m {
        let mut c = lag_product(&rows, &rows, n, d, i) / (n - i) as f64;
        if literal {
            c = &s_inv * c;
        }
        // vec(C)' (S^{-1} (x) S^{-1}) vec(C) = tr(C' S^{-1} C S^{-1})
        let q = (c.transpose() * &s_inv * &c * &s_inv).trace();
        per_lag.push((n - i) as f64 * q);
    }
    let statistic: f64 = per_lag.iter().sum();
    Ok(TestReport {
        method: TestMethod::Gaussian,
        scores: None,
        statistic,
        m,
        df,
        p_value: p_value(statistic, df),
        per_lag,
        mp_rank: None,
        warnings: Vec::new(),
    })
}

/// Weighting matrices of the rank statistic at lag depth `m`.
#[derive(Clone, Debug, Serialize)]
pub struct WeightMatrices {
    /// `md^2 x md^2`
    pub e: DMatrix<f64>,
    /// `m` blocks of size `d^2 x d^2`.
    pub omega: Vec<DMatrix<f64>>,
    /// `m` blocks of size `d^2 x md^2`.
    pub w: Vec<DMatrix<f64>>,
}

impl WeightMatrices {
    /// `E (I_m (x) D) E'`
    pub fn covariance(&self, d_mat: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.omega.len();
        &self.e * kron(&identity(m), d_mat) * self.e.transpose()
    }
}

/// `E = I - (I_m (x) K) C' (C (I_m (x) K) C')^{-1} C`,
/// `W_i = (e_i' (x) D^{1/2}) - K c_i' (sum c_j K c_j')^{-1} C (I_m (x) D^{1/2})`
/// and `Omega_i = W_i W_i'`, with `C = (c_1, ..., c_m)`.
pub fn weight_matrices(
    theta: &ThetaVector,
    order: ModelOrder,
    k: &DMatrix<f64>,
    d_mat: &DMatrix<f64>,
    m: usize,
) -> Result<WeightMatrices> {
    let dd = order.d * order.d;
    if k.shape() != (dd, dd) || d_mat.shape() != (dd, dd) {
        return dim(format!("K and D must be {dd}x{dd}"));
    }
    if m < 1 {
        return arg("m must be at least 1");
    }
    let md = m * dd;
    let d_half = sym_sqrt(d_mat);
    let basis = |i: usize| {
        let mut e = DMatrix::zeros(1, m);
        e[(0, i)] = 1.0;
        kron(&e, &d_half)
    };
    if order.n_params() == 0 {
        return Ok(WeightMatrices {
            e: identity(md),
            omega: vec![d_half.clone() * &d_half; m],
            w: (0..m).map(basis).collect(),
        });
    }
    let blocks = coeff_blocks(theta, order, m)?;
    let c = blocks.stacked();
    let ups = blocks.weighted_gram(k, m);
    let ups_inv = inverse(&ups, "sum of c_i K c_i'")?;
    let ik = kron(&identity(m), k);
    let e = identity(md) - &ik * c.transpose() * &ups_inv * &c;
    let right = &ups_inv * &c * kron(&identity(m), &d_half);
    let w: Vec<DMatrix<f64>> = (0..m).map(|i| basis(i) - k * blocks.c(i + 1).transpose() * &right).collect();
    let omega = w.iter().map(|wi| wi * wi.transpose()).collect();
    Ok(WeightMatrices { e, omega, w })
}

/// Rank statistic `n G' (E (I_m (x) D) E')^- G` from the ranks at the
/// R-estimate, `G` the stacked rank cross-covariances.
pub fn rank_stat_from_state(
    state: &RankState,
    theta_tilde: &ThetaVector,
    order: ModelOrder,
    scores: &ScoreSpec,
    m: usize,
    k_hat: &DMatrix<f64>,
) -> Result<TestReport> {
    let df = degrees_of_freedom(order, m)?;
    let n = state.n();
    if m >= n {
        return arg(format!("m={m} must be below n={n}"));
    }
    let covs = state.cross_covs(m)?;
    let gamma = stack_cross_cov(&covs, n)?;
    let weights = weight_matrices(theta_tilde, order, k_hat, scores.d_matrix(), m)?;
    let (v_pinv, mp_rank) = pinv(&weights.covariance(scores.d_matrix()), SVD_RELATIVE_CUTOFF);
    let statistic = (n as f64 * gamma.dot(&(&v_pinv * &gamma))).max(0.0);
    let per_lag = covs
        .iter()
        .zip(&weights.omega)
        .map(|(c, om)| {
            let v = vec_of(&c.matrix);
            let (om_pinv, _) = pinv(om, SVD_RELATIVE_CUTOFF);
            c.n_terms as f64 * v.dot(&(om_pinv * &v))
        })
        .collect();
    let mut warnings = Vec::new();
    if mp_rank.abs_diff(df) > order.d * order.d {
        warnings
            .push(format!("pseudo-inverse rank {mp_rank} differs from d^2(m-p-q)={df}; weighting is near-singular"));
    }
    Ok(TestReport {
        method: TestMethod::Rank,
        scores: Some(scores.kind()),
        statistic,
        m,
        df,
        p_value: p_value(statistic, df),
        per_lag,
        mp_rank: Some(mp_rank),
        warnings,
    })
}

/// [`rank_stat_from_state`] computing the ranks at the R-estimate first.
pub fn rank_stat(
    series: &SeriesData,
    restimate: &REstimate,
    order: ModelOrder,
    scores: &ScoreSpec,
    grid: &Grid,
    m: usize,
    k_hat: &KMatrix,
) -> Result<TestReport> {
    let state = rank_state(series, &restimate.theta_tilde, order, scores, grid, None)?;
    rank_stat_from_state(&state, &restimate.theta_tilde, order, scores, m, &k_hat.k)
}

/// Rank tests at several lag depths together with the fit they rest on.
#[derive(Clone, Debug)]
pub struct RankTests {
    /// `None` for white-noise models, which have nothing to estimate.
    pub fit: Option<RankFit>,
    pub reports: Vec<TestReport>,
}

/// The rank-based test for every `m` in `m_values`: one-step R-estimate from
/// `theta_bar`, then the statistic from the ranks at the estimate. White-noise
/// models are tested directly; their weighting does not involve `K`.
pub fn rank_tests(
    series: &SeriesData,
    theta_bar: &ThetaVector,
    order: ModelOrder,
    scores: &ScoreSpec,
    grid: &Grid,
    m_values: &[usize],
    reestimate_k: bool,
) -> Result<RankTests> {
    let (fit, state, theta, k) = if order.n_params() == 0 {
        let theta = ThetaVector::new(Vec::new());
        let state = rank_state(series, &theta, order, scores, grid, None)?;
        (None, state, theta, identity(order.d * order.d))
    } else {
        let rf = rank_fit(series, theta_bar, order, scores, grid, reestimate_k)?;
        let (state, theta, k) = (rf.state.clone(), rf.estimate.theta_tilde.clone(), rf.k_test.k.clone());
        (Some(rf), state, theta, k)
    };
    let reports =
        m_values.iter().map(|&m| rank_stat_from_state(&state, &theta, order, scores, m, &k)).collect::<Result<_>>()?;
    Ok(RankTests { fit, reports })
}

/// Quadratic form `n g' V^- g` with the pseudo-inverse rank, for callers that
/// assemble their own weighting.
pub fn pinv_quadratic_form(g: &DVector<f64>, v: &DMatrix<f64>, n: usize) -> (f64, usize) {
    let (vp, rank) = pinv(v, SVD_RELATIVE_CUTOFF);
    (n as f64 * g.dot(&(vp * g)), rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::score_moments;
    use crate::varma::VarmaSpec;

    fn null_spec() -> VarmaSpec {
        VarmaSpec::from_rows(2, &[&[0.5, 0.2, -0.1, 0.4]], &[&[0.3, 0.0, 0.0, 0.4]]).unwrap()
    }

    #[test]
    fn degrees_of_freedom_values() {
        let o = ModelOrder::new(2, 1, 1);
        assert_eq!(degrees_of_freedom(o, 5).unwrap(), 12);
        assert_eq!(degrees_of_freedom(o, 25).unwrap(), 92);
        assert_eq!(degrees_of_freedom(o, 8).unwrap(), 24);
        assert!(degrees_of_freedom(o, 2).is_err());
    }

    #[test]
    fn p_values() {
        assert_eq!(p_value(0.0, 3), 1.0);
        assert!((p_value(2.0 * 20f64.ln(), 2) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn weight_identities() {
        let spec = null_spec();
        let d_mat = score_moments(ScoreKind::Vdw, 2).unwrap();
        for m in [5usize, 10] {
            let w = weight_matrices(&spec.theta(), spec.order(), &identity(4), &d_mat, m).unwrap();
            assert!((w.e.trace() - ((m - 2) * 4) as f64).abs() < 1e-6);
            assert!((&w.e * &w.e - &w.e).norm() < 1e-8);
            let cov = w.covariance(&d_mat);
            for i in 0..m {
                let block = cov.view((i * 4, i * 4), (4, 4)).into_owned();
                assert!((block - &w.omega[i]).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn no_parameters_means_no_projection() {
        let d_mat = score_moments(ScoreKind::Sign, 2).unwrap();
        let w = weight_matrices(&ThetaVector::new(vec![]), ModelOrder::new(2, 0, 0), &identity(4), &d_mat, 3).unwrap();
        assert_eq!(w.e, identity(12));
        for om in &w.omega {
            assert!((om - &d_mat).amax() < 1e-15);
        }
    }

    #[test]
    fn csv_row_layout() {
        let r = TestReport {
            method: TestMethod::Rank,
            scores: Some(ScoreKind::Vdw),
            statistic: 1.5,
            m: 5,
            df: 12,
            p_value: 0.25,
            per_lag: vec![],
            mp_rank: Some(12),
            warnings: vec![],
        };
        assert_eq!(r.csv_row(), "rank,vdw,5,12,1.5,0.25");
    }
}
