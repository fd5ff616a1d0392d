//! VARMA(p, q) parameterization, simulation and residual recursion.
//!
//! The model is `(I - sum A_i L^i) X_t = (I + sum B_j L^j) eps_t`. The
//! parameter vector stacks `vec A_1, ..., vec A_p, vec B_1, ..., vec B_q`
//! (column-major `vec`). Every recursion here starts from zero initial
//! values, `X_s = eps_s = 0` for `s <= 0`.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, dim, Error, Result};
use crate::innovations::{Innovations, SimRng};
use crate::linalg::{companion_moduli, kron};

/// Default tolerance on companion eigenvalue moduli.
pub const STABILITY_TOL: f64 = 1e-8;
/// Tail tolerance for adaptive truncation of Green matrices and coefficient blocks.
pub const TAIL_TOL: f64 = 1e-12;

/// Dimension and orders of a VARMA model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrder {
    pub d: usize,
    pub p: usize,
    pub q: usize,
}

impl ModelOrder {
    pub fn new(d: usize, p: usize, q: usize) -> Self {
        ModelOrder { d, p, q }
    }

    /// `(p + q) d^2`
    pub fn n_params(&self) -> usize {
        (self.p + self.q) * self.d * self.d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecJson", into = "SpecJson")]
pub struct VarmaSpec {
    d: usize,
    ar: Vec<DMatrix<f64>>,
    ma: Vec<DMatrix<f64>>,
}

impl VarmaSpec {
    pub fn new(d: usize, ar: Vec<DMatrix<f64>>, ma: Vec<DMatrix<f64>>) -> Result<Self> {
        if d == 0 {
            return dim("dimension must be positive");
        }
        for (name, mats) in [("A", &ar), ("B", &ma)] {
            for (i, m) in mats.iter().enumerate() {
                if m.nrows() != d || m.ncols() != d {
                    return dim(format!("{name}_{} is {}x{}, expected {d}x{d}", i + 1, m.nrows(), m.ncols()));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{name}_{}", i + 1)));
                }
            }
        }
        Ok(VarmaSpec { d, ar, ma })
    }

    /// Builds a spec from row-major coefficient arrays.
    pub fn from_rows(d: usize, ar: &[&[f64]], ma: &[&[f64]]) -> Result<Self> {
        let conv = |rows: &[&[f64]]| -> Result<Vec<DMatrix<f64>>> {
            rows.iter()
                .map(|r| {
                    if r.len() != d * d {
                        dim(format!("coefficient has {} entries, expected {}", r.len(), d * d))
                    } else {
                        Ok(DMatrix::from_row_slice(d, d, r))
                    }
                })
                .collect()
        };
        VarmaSpec::new(d, conv(ar)?, conv(ma)?)
    }

    pub fn white_noise(d: usize) -> Self {
        VarmaSpec { d, ar: Vec::new(), ma: Vec::new() }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.ar.len()
    }

    pub fn q(&self) -> usize {
        self.ma.len()
    }

    pub fn order(&self) -> ModelOrder {
        ModelOrder::new(self.d, self.p(), self.q())
    }

    pub fn ar(&self) -> &[DMatrix<f64>] {
        &self.ar
    }

    pub fn ma(&self) -> &[DMatrix<f64>] {
        &self.ma
    }

    pub fn theta(&self) -> ThetaVector {
        let mut values = Vec::with_capacity(self.order().n_params());
        for m in self.ar.iter().chain(&self.ma) {
            values.extend_from_slice(m.as_slice());
        }
        ThetaVector::new(values)
    }

    /// Applies `X -> Q X` to the model: coefficients become `Q M Q'`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> VarmaSpec {
        let conj = |m: &DMatrix<f64>| q * m * q.transpose();
        VarmaSpec { d: self.d, ar: self.ar.iter().map(conj).collect(), ma: self.ma.iter().map(conj).collect() }
    }
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    d: usize,
    p: usize,
    q: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<SpecJson> for VarmaSpec {
    type Error = Error;

    fn try_from(j: SpecJson) -> Result<Self> {
        if j.a.len() != j.p || j.b.len() != j.q {
            return dim(format!(
                "declared orders p={}, q={} but {} A and {} B matrices given",
                j.p,
                j.q,
                j.a.len(),
                j.b.len()
            ));
        }
        let conv = |mats: Vec<Vec<Vec<f64>>>| -> Result<Vec<DMatrix<f64>>> {
            mats.into_iter()
                .map(|rows| {
                    if rows.len() != j.d || rows.iter().any(|r| r.len() != j.d) {
                        return dim(format!("coefficient matrix is not {}x{}", j.d, j.d));
                    }
                    let flat: Vec<f64> = rows.into_iter().flatten().collect();
                    Ok(DMatrix::from_row_slice(j.d, j.d, &flat))
                })
                .collect()
        };
        VarmaSpec::new(j.d, conv(j.a)?, conv(j.b)?)
    }
}

impl From<VarmaSpec> for SpecJson {
    fn from(s: VarmaSpec) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
        };
        SpecJson {
            d: s.d,
            p: s.ar.len(),
            q: s.ma.len(),
            a: s.ar.iter().map(rows).collect(),
            b: s.ma.iter().map(rows).collect(),
        }
    }
}

/// The stacked parameter `theta`, of length `(p + q) d^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector {
    values: Vec<f64>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Self {
        ThetaVector { values }
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        ThetaVector::new(v.as_slice().to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, order: ModelOrder) -> Result<()> {
        if self.values.len() != order.n_params() {
            return dim(format!("theta has length {}, expected (p+q)d^2 = {}", self.values.len(), order.n_params()));
        }
        Ok(())
    }

    pub fn to_spec(&self, order: ModelOrder) -> Result<VarmaSpec> {
        self.check(order)?;
        let dd = order.d * order.d;
        let mats: Vec<DMatrix<f64>> = self
            .values
            .chunks(dd.max(1))
            .take(order.p + order.q)
            .map(|c| DMatrix::from_column_slice(order.d, order.d, c))
            .collect();
        let (ar, ma) = mats.split_at(order.p);
        VarmaSpec::new(order.d, ar.to_vec(), ma.to_vec())
    }

    /// `self + scale * direction`
    pub fn shifted(&self, direction: &DVector<f64>, scale: f64) -> ThetaVector {
        ThetaVector::new(self.values.iter().zip(direction.iter()).map(|(a, b)| a + scale * b).collect())
    }

    pub fn distance(&self, other: &ThetaVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Outcome of [`validate_spec`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// AR companion eigenvalue moduli, decreasing.
    pub ar_moduli: Vec<f64>,
    /// MA companion eigenvalue moduli, decreasing.
    pub ma_moduli: Vec<f64>,
    pub det_ar_last: Option<f64>,
    pub det_ma_last: Option<f64>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

/// Checks stationarity, invertibility and non-singularity of the last
/// coefficients. Left coprimeness of the operators is assumed, not checked.
pub fn validate_spec(spec: &VarmaSpec, tol: f64) -> Result<ValidationReport> {
    if !(tol > 0.0) {
        return arg("tolerance must be positive");
    }
    let d = spec.d;
    let ar_moduli = companion_moduli(&spec.ar, d);
    let neg_ma: Vec<DMatrix<f64>> = spec.ma.iter().map(|b| -b).collect();
    let ma_moduli = companion_moduli(&neg_ma, d);
    let mut failures = Vec::new();
    for (name, moduli) in [("AR", &ar_moduli), ("MA", &ma_moduli)] {
        for m in moduli.iter().filter(|m| !(**m < 1.0 - tol)) {
            failures.push(format!("{name} companion eigenvalue modulus {m:.12} >= 1 - tol"));
        }
    }
    let det_ar_last = spec.ar.last().map(|a| a.determinant());
    let det_ma_last = spec.ma.last().map(|b| b.determinant());
    for (name, det) in [("A_p", det_ar_last), ("B_q", det_ma_last)] {
        if let Some(det) = det {
            if !(det.abs() > tol) {
                failures.push(format!("|det {name}| = {:.3e} <= tol", det.abs()));
            }
        }
    }
    let mut warnings = Vec::new();
    if spec.p() > 0 && spec.q() > 0 {
        warnings.push("left coprimeness of the AR and MA operators is assumed, not verified".into());
    }
    Ok(ValidationReport {
        passed: failures.is_empty(),
        ar_moduli,
        ma_moduli,
        det_ar_last,
        det_ma_last,
        failures,
        warnings,
    })
}

pub(crate) fn require_valid(spec: &VarmaSpec) -> Result<()> {
    let report = validate_spec(spec, STABILITY_TOL)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::InvalidModel(report.failures.join("; ")))
    }
}

/// Stationary and invertible (ignores the determinant condition).
pub(crate) fn is_stable(spec: &VarmaSpec) -> bool {
    let neg_ma: Vec<DMatrix<f64>> = spec.ma.iter().map(|b| -b).collect();
    companion_moduli(&spec.ar, spec.d).iter().all(|m| *m < 1.0 - STABILITY_TOL)
        && companion_moduli(&neg_ma, spec.d).iter().all(|m| *m < 1.0 - STABILITY_TOL)
}

/// Coefficients of the inverted AR operator (`G_u`) and MA operator (`H_u`),
/// for `u = 0..=U`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenMatrices {
    pub g: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
}

impl GreenMatrices {
    pub fn truncation(&self) -> usize {
        self.g.len() - 1
    }
}

/// Extends the Green sequences by one index.
fn push_green(spec: &VarmaSpec, g: &mut Vec<DMatrix<f64>>, h: &mut Vec<DMatrix<f64>>) {
    let d = spec.d;
    let u = g.len();
    if u == 0 {
        g.push(DMatrix::identity(d, d));
        h.push(DMatrix::identity(d, d));
        return;
    }
    let mut gu = DMatrix::zeros(d, d);
    for i in 1..=spec.p().min(u) {
        gu += &spec.ar[i - 1] * &g[u - i];
    }
    let mut hu = DMatrix::zeros(d, d);
    for j in 1..=spec.q().min(u) {
        hu -= &spec.ma[j - 1] * &h[u - j];
    }
    g.push(gu);
    h.push(hu);
}

fn green_unchecked(spec: &VarmaSpec, u_max: usize) -> GreenMatrices {
    let mut g = Vec::with_capacity(u_max + 1);
    let mut h = Vec::with_capacity(u_max + 1);
    while g.len() <= u_max {
        push_green(spec, &mut g, &mut h);
    }
    GreenMatrices { g, h }
}

/// Green matrices `G_0..G_U`, `H_0..H_U` of a valid model.
pub fn green_matrices(spec: &VarmaSpec, u_max: usize) -> Result<GreenMatrices> {
    if u_max < 1 {
        return arg("truncation order U must be at least 1");
    }
    require_valid(spec)?;
    Ok(green_unchecked(spec, u_max))
}

/// Green matrices truncated at the smallest `U` with
/// `max(|G_U|, |H_U|) < 1e-12`, never beyond `cap`.
pub fn green_matrices_adaptive(spec: &VarmaSpec, cap: usize) -> Result<GreenMatrices> {
    require_valid(spec)?;
    let mut g = Vec::new();
    let mut h = Vec::new();
    push_green(spec, &mut g, &mut h);
    loop {
        push_green(spec, &mut g, &mut h);
        let u = g.len() - 1;
        if g[u].norm().max(h[u].norm()) < TAIL_TOL || u >= cap.max(1) {
            break;
        }
    }
    Ok(GreenMatrices { g, h })
}

/// The blocks `c_{i,theta}`, each `(p+q)d^2 x d^2`, for `i = 1..=m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffBlocks {
    pub blocks: Vec<DMatrix<f64>>,
    order: ModelOrder,
}

impl CoeffBlocks {
    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    /// `c_i` with 1-based lag.
    pub fn c(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i - 1]
    }

    /// Horizontal stacking `(c_1, ..., c_m)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        self.stacked_to(self.m())
    }

    /// Horizontal stacking of the first `m` blocks.
    pub fn stacked_to(&self, m: usize) -> DMatrix<f64> {
        let k = self.order.n_params();
        let dd = self.order.d * self.order.d;
        let mut out = DMatrix::zeros(k, m * dd);
        for (i, b) in self.blocks.iter().take(m).enumerate() {
            out.view_mut((0, i * dd), (k, dd)).copy_from(b);
        }
        out
    }

    /// `sum_{i<=m} c_i K c_i'`
    pub fn weighted_gram(&self, k: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
        let n = self.order.n_params();
        let mut acc = DMatrix::zeros(n, n);
        for c in self.blocks.iter().take(m) {
            acc += c * k * c.transpose();
        }
        acc
    }

    /// `sum_{i<=m} w_i c_i vec(M_i)` for per-lag vectors `v_i = w_i vec(M_i)`.
    pub fn combine(&self, lag_vectors: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(self.order.n_params());
        for (c, v) in self.blocks.iter().zip(lag_vectors) {
            acc += c * v;
        }
        acc
    }
}

/// Incremental generator of coefficient blocks.
struct BlockBuilder<'a> {
    spec: &'a VarmaSpec,
    g: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
}

impl<'a> BlockBuilder<'a> {
    fn new(spec: &'a VarmaSpec) -> Self {
        BlockBuilder { spec, g: Vec::new(), h: Vec::new() }
    }

    fn ensure(&mut self, u: usize) {
        while self.g.len() <= u {
            push_green(self.spec, &mut self.g, &mut self.h);
        }
    }

    /// `c_i` assembled from the double sums over `j` and `k`.
    fn block(&mut self, i: usize) -> DMatrix<f64> {
        let spec = self.spec;
        let d = spec.d;
        let (p, q) = (spec.p(), spec.q());
        let dd = d * d;
        self.ensure(i);
        let eye = DMatrix::identity(d, d);
        let mut out = DMatrix::zeros((p + q) * dd, dd);
        for l in 1..=p {
            if i < l {
                continue;
            }
            let mut acc = DMatrix::zeros(dd, dd);
            for j in 0..=(i - l) {
                let h_t = self.h[j].transpose();
                for k in 0..=q.min(i - j - l) {
                    let b_k = if k == 0 { &eye } else { &spec.ma[k - 1] };
                    acc += kron(&(&self.g[i - j - k - l] * b_k), &h_t);
                }
            }
            out.view_mut(((l - 1) * dd, 0), (dd, dd)).copy_from(&acc);
        }
        for l in 1..=q {
            if i < l {
                continue;
            }
            let blk = kron(&eye, &self.h[i - l].transpose());
            out.view_mut(((p + l - 1) * dd, 0), (dd, dd)).copy_from(&blk);
        }
        out
    }
}

/// Coefficient blocks `c_1..c_m` for the parameter `theta`.
pub fn coeff_blocks(theta: &ThetaVector, order: ModelOrder, m: usize) -> Result<CoeffBlocks> {
    if m < 1 {
        return arg("lag depth m must be at least 1");
    }
    let spec = theta.to_spec(order)?;
    let mut b = BlockBuilder::new(&spec);
    let blocks = (1..=m).map(|i| b.block(i)).collect();
    Ok(CoeffBlocks { blocks, order })
}

/// Coefficient blocks up to the last lag before `|c_i| < 1e-12`, capped at
/// `cap` lags. A model without parameters yields an empty sequence.
pub fn coeff_blocks_auto(theta: &ThetaVector, order: ModelOrder, cap: usize) -> Result<CoeffBlocks> {
    let spec = theta.to_spec(order)?;
    let mut blocks = Vec::new();
    if order.n_params() > 0 {
        let mut b = BlockBuilder::new(&spec);
        for i in 1..=cap {
            let c = b.block(i);
            if c.norm() < TAIL_TOL {
                break;
            }
            blocks.push(c);
        }
    }
    Ok(CoeffBlocks { blocks, order })
}

/// An observed `n x d` series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesData {
    pub x: DMatrix<f64>,
}

impl SeriesData {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series".into()));
        }
        Ok(SeriesData { x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn rotated(&self, q: &DMatrix<f64>) -> SeriesData {
        SeriesData { x: &self.x * q.transpose() }
    }
}

/// Residuals `Z_t(theta)`, `t = 1..n`, as the rows of an `n x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    pub z: DMatrix<f64>,
    pub theta: ThetaVector,
}

/// A simulated series together with the innovations that generated it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub series: SeriesData,
    pub innovations: DMatrix<f64>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = Vec::with_capacity(n * d);
    for t in 0..n {
        for k in 0..d {
            out.push(m[(t, k)]);
        }
    }
    out
}

pub(crate) fn from_rows(rows: &[f64], n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, d, rows)
}

/// `out += M v` for a `d x d` matrix.
#[inline]
pub(crate) fn gemv_add(m: &DMatrix<f64>, v: &[f64], out: &mut [f64], sign: f64) {
    let d = v.len();
    for c in 0..d {
        let vc = v[c] * sign;
        if vc == 0.0 {
            continue;
        }
        let col = m.column(c);
        for r in 0..d {
            out[r] += col[r] * vc;
        }
    }
}

/// Simulates `n` observations after discarding `burn_in` warm-up values.
/// With `burn_in = 0` the returned innovations are recovered exactly by
/// [`residuals`] at the true parameter.
pub fn simulate<S: Innovations + ?Sized>(
    spec: &VarmaSpec,
    n: usize,
    sampler: &S,
    seed: u64,
    burn_in: usize,
) -> Result<Simulation> {
    if n < 1 {
        return arg("series length must be at least 1");
    }
    if sampler.dim() != spec.d {
        return dim(format!("sampler dimension {} does not match model dimension {}", sampler.dim(), spec.d));
    }
    require_valid(spec)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let total = n + burn_in;
    let eps = to_rows(&sampler.draw_matrix(&mut rng, total));
    let x = filter_forward(spec, &eps, total);
    let d = spec.d;
    Ok(Simulation {
        series: SeriesData::new(from_rows(&x[burn_in * d..], n, d))?,
        innovations: from_rows(&eps[burn_in * d..], n, d),
    })
}

/// `X_t = sum A_i X_{t-i} + eps_t + sum B_j eps_{t-j}`, zero initial values.
fn filter_forward(spec: &VarmaSpec, eps: &[f64], n: usize) -> Vec<f64> {
    let d = spec.d;
    let mut x = vec![0.0; n * d];
    for t in 0..n {
        let mut cur = eps[t * d..(t + 1) * d].to_vec();
        for (i, a) in spec.ar.iter().enumerate() {
            if t > i {
                gemv_add(a, &x[(t - i - 1) * d..(t - i) * d], &mut cur, 1.0);
            }
        }
        for (j, b) in spec.ma.iter().enumerate() {
            if t > j {
                gemv_add(b, &eps[(t - j - 1) * d..(t - j) * d], &mut cur, 1.0);
            }
        }
        x[t * d..(t + 1) * d].copy_from_slice(&cur);
    }
    x
}

/// Residual recursion `Z_t = X_t - sum A_i X_{t-i} - sum B_j Z_{t-j}` in
/// row-major layout.
pub(crate) fn residual_rows(spec: &VarmaSpec, x: &[f64], n: usize) -> Vec<f64> {
    let d = spec.d;
    let mut z = vec![0.0; n * d];
    for t in 0..n {
        let mut cur = x[t * d..(t + 1) * d].to_vec();
        for (i, a) in spec.ar.iter().enumerate() {
            if t > i {
                gemv_add(a, &x[(t - i - 1) * d..(t - i) * d], &mut cur, -1.0);
            }
        }
        for (j, b) in spec.ma.iter().enumerate() {
            if t > j {
                gemv_add(b, &z[(t - j - 1) * d..(t - j) * d], &mut cur, -1.0);
            }
        }
        z[t * d..(t + 1) * d].copy_from_slice(&cur);
    }
    z
}

/// Residuals of `series` at `theta`, zero initial values.
pub fn residuals(series: &SeriesData, theta: &ThetaVector, order: ModelOrder) -> Result<ResidualSet> {
    if series.d() != order.d {
        return dim(format!("series dimension {} does not match model dimension {}", series.d(), order.d));
    }
    let spec = theta.to_spec(order)?;
    let n = series.n();
    let z = residual_rows(&spec, &to_rows(&series.x), n);
    Ok(ResidualSet { z: from_rows(&z, n, order.d), theta: theta.clone() })
}

/// `vec` of a `d x d` lag product `sum_t a_t b_{t-i}'` for row-major series.
pub(crate) fn lag_product(a: &[f64], b: &[f64], n: usize, d: usize, lag: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for t in lag..n {
        let at = &a[t * d..(t + 1) * d];
        let bt = &b[(t - lag) * d..(t - lag + 1) * d];
        for c in 0..d {
            for r in 0..d {
                m[(r, c)] += at[r] * bt[c];
            }
        }
    }
    m
}

/// Solution of `G = A G A' + S` by fixed-point iteration (used in tests and
/// diagnostics).
pub fn discrete_lyapunov(a: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = s.clone();
    for _ in 0..10_000 {
        let next = a * &g * a.transpose() + s;
        let diff = (&next - &g).norm();
        g = next;
        if diff < 1e-15 * g.norm() {
            break;
        }
    }
    g
}
