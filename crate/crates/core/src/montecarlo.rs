//! Reproducible size and power experiments for the portmanteau tests.
//!
//! Every replication draws its simulation seed from a ChaCha stream indexed
//! by `(density, replication)`, so results do not depend on how the
//! replications are scheduled across threads. Aggregation walks the
//! replications in index order.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::center_outward::{make_grid, Grid};
use crate::error::{arg, Error, Result};
use crate::estimation::{discretize, qmle};
use crate::innovations::{DensitySpec, MixtureSigma2};
use crate::portmanteau::{gaussian_stat, rank_tests, TestMethod};
use crate::scores::{ScoreKind, ScoreSpec};
use crate::varma::{simulate, VarmaSpec};

/// Environment variable holding the default parallelism width.
pub const THREADS_ENV: &str = "CORANK_THREADS";
/// Largest tolerated share of failed replications per density.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// The VARMA(1,1) null model of the experiments.
pub fn null_spec() -> VarmaSpec {
    VarmaSpec::from_rows(2, &[&[0.5, 0.2, -0.1, 0.4]], &[&[0.3, 0.0, 0.0, 0.4]]).expect("static coefficients")
}

/// The VARMA(1,2) alternative: the null plus a second MA coefficient.
pub fn alternative_spec() -> VarmaSpec {
    VarmaSpec::from_rows(2, &[&[0.5, 0.2, -0.1, 0.4]], &[&[0.3, 0.0, 0.0, 0.4], &[0.07, 0.03, -0.02, 0.1]])
        .expect("static coefficients")
}

/// A test to run in every replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub method: TestMethod,
    pub scores: Option<ScoreKind>,
}

impl MethodSpec {
    pub fn gaussian() -> Self {
        MethodSpec { method: TestMethod::Gaussian, scores: None }
    }

    pub fn rank(scores: ScoreKind) -> Self {
        MethodSpec { method: TestMethod::Rank, scores: Some(scores) }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scores {
            Some(s) => write!(f, "{}:{}", self.method, s),
            None => write!(f, "{}", self.method),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    /// `gaussian`, `rank:<scores>`, or a bare score name for a rank test.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "gaussian" => Ok(MethodSpec::gaussian()),
            None => Ok(MethodSpec::rank(s.parse()?)),
            Some(("rank", sc)) => Ok(MethodSpec::rank(sc.parse()?)),
            _ => arg(format!("unknown method '{s}'")),
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Size,
    Power,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GridConfig {
    pub n_r: Option<usize>,
    pub symmetric: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub null_spec: VarmaSpec,
    pub alt_spec: VarmaSpec,
    pub n: usize,
    pub replications: usize,
    pub m_values: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    pub densities: Vec<DensitySpec>,
    pub grid: GridConfig,
    pub alpha: f64,
    pub master_seed: u64,
    /// Parallelism width; `0` means the [`THREADS_ENV`] value or the number
    /// of available cores.
    pub threads: usize,
    pub burn_in: usize,
    /// Re-estimate `K` at the R-estimate before testing.
    pub reestimate_k: bool,
    pub literal_normalization: bool,
    /// Lattice constant for discretizing the preliminary estimate.
    pub discretize: Option<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig::desk()
    }
}

impl McConfig {
    /// Desk-scale defaults: `N = 200`, `n = 500`.
    pub fn desk() -> Self {
        McConfig {
            null_spec: null_spec(),
            alt_spec: alternative_spec(),
            n: 500,
            replications: 200,
            m_values: vec![5, 8, 10, 15, 20, 25],
            methods: vec![
                MethodSpec::gaussian(),
                MethodSpec::rank(ScoreKind::Sign),
                MethodSpec::rank(ScoreKind::Spearman),
                MethodSpec::rank(ScoreKind::Vdw),
            ],
            densities: vec![DensitySpec::SphericalNormal, DensitySpec::mixture(), DensitySpec::skew_t3(2)],
            grid: GridConfig::default(),
            alpha: 0.05,
            master_seed: 20240601,
            threads: 0,
            burn_in: 200,
            reestimate_k: true,
            literal_normalization: false,
            discretize: None,
        }
    }

    /// `N = 300` replications of length `n = 1000`.
    pub fn paper_scale() -> Self {
        McConfig { n: 1000, replications: 300, ..McConfig::desk() }
    }

    pub fn with_mixture_sigma2(mut self, sigma2: MixtureSigma2) -> Self {
        for dens in &mut self.densities {
            if let DensitySpec::GaussianMixture { sigma2: s } = dens {
                *s = sigma2;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return arg("alpha must lie in (0, 1)");
        }
        if self.null_spec.d() != self.alt_spec.d() {
            return arg("null and alternative models differ in dimension");
        }
        if self.replications == 0 || self.n < 2 {
            return arg("need at least one replication and n >= 2");
        }
        let pq = self.null_spec.p() + self.null_spec.q();
        if let Some(m) = self.m_values.iter().find(|&&m| m <= pq || m >= self.n) {
            return arg(format!("m={m} must lie in ({pq}, {})", self.n));
        }
        Ok(())
    }

    pub fn effective_threads(&self) -> usize {
        if self.threads > 0 {
            return self.threads;
        }
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&t: &usize| t > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    /// Simulation seed of replication `rep` under density `density`.
    pub fn replication_seed(&self, density: usize, rep: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((density as u64) << 32) | rep as u64);
        rng.next_u64()
    }

    fn grid_seed(&self) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(u64::MAX);
        rng.next_u64()
    }

    /// `(method, m)` pairs in the order p-values are logged.
    pub fn columns(&self) -> Vec<(MethodSpec, usize)> {
        self.methods.iter().flat_map(|&meth| self.m_values.iter().map(move |&m| (meth, m))).collect()
    }
}

/// Outcome of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationLog {
    pub density: String,
    pub replication: usize,
    pub seed: u64,
    /// One p-value per entry of [`McConfig::columns`]; empty on failure.
    pub p_values: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub density: String,
    pub method: String,
    pub scores: String,
    pub m: usize,
    pub rate: f64,
    pub se: f64,
    #[serde(rename = "N")]
    pub n_reps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McResult {
    pub kind: ExperimentKind,
    pub config: McConfig,
    pub rows: Vec<RateRow>,
    pub failures: Vec<(String, usize)>,
    pub wall_clock_secs: f64,
    pub log: Vec<ReplicationLog>,
}

impl McResult {
    pub fn rate(&self, density: &str, method: MethodSpec, m: usize) -> Option<&RateRow> {
        let (name, scores) = method_columns(method);
        self.rows.iter().find(|r| r.density == density && r.method == name && r.scores == scores && r.m == m)
    }
}

fn method_columns(meth: MethodSpec) -> (String, String) {
    (meth.method.name().to_string(), meth.scores.map(|s| s.name().to_string()).unwrap_or_default())
}

/// Tests every configured method on one series.
fn replicate(config: &McConfig, spec: &VarmaSpec, grid: &Grid, density: &DensitySpec, seed: u64) -> Result<Vec<f64>> {
    let null = &config.null_spec;
    let order = null.order();
    let sampler = density.sampler(spec.d())?;
    let series = simulate(spec, config.n, &sampler, seed, config.burn_in)?.series;
    let fit = qmle(&series, order.p, order.q, None)?;
    if !fit.converged {
        return Err(Error::Experiment(format!(
            "QMLE did not converge (gradient norm {:.3e})",
            fit.final_gradient_norm
        )));
    }
    let theta_bar = match config.discretize {
        Some(c) => discretize(&fit.theta_hat, c, config.n)?,
        None => fit.theta_hat.clone(),
    };
    let mut out = Vec::new();
    for meth in &config.methods {
        match meth.scores {
            None => {
                for &m in &config.m_values {
                    out.push(gaussian_stat(&series, &fit, m, config.literal_normalization)?.p_value);
                }
            }
            Some(kind) => {
                let scores = ScoreSpec::named(kind, order.d)?;
                let tests =
                    rank_tests(&series, &theta_bar, order, &scores, grid, &config.m_values, config.reestimate_k)?;
                out.extend(tests.reports.iter().map(|r| r.p_value));
            }
        }
    }
    if out.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("p-value".into()));
    }
    Ok(out)
}

fn run(config: &McConfig, kind: ExperimentKind) -> Result<McResult> {
    config.validate()?;
    let start = Instant::now();
    let spec = match kind {
        ExperimentKind::Size => &config.null_spec,
        ExperimentKind::Power => &config.alt_spec,
    };
    let grid = make_grid(config.n, spec.d(), config.grid.n_r, config.grid_seed(), config.grid.symmetric)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.effective_threads())
        .build()
        .map_err(|e| Error::Experiment(e.to_string()))?;
    let jobs: Vec<(usize, usize)> =
        (0..config.densities.len()).flat_map(|k| (0..config.replications).map(move |r| (k, r))).collect();
    let log: Vec<ReplicationLog> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, r)| {
                let density = &config.densities[k];
                let seed = config.replication_seed(k, r);
                let outcome = replicate(config, spec, &grid, density, seed);
                let (p_values, error) = match outcome {
                    Ok(p) => (p, None),
                    Err(e) => (Vec::new(), Some(e.to_string())),
                };
                ReplicationLog { density: density.name().to_string(), replication: r, seed, p_values, error }
            })
            .collect()
    });
    let rows = aggregate(config, &log);
    let mut failures = Vec::new();
    for dens in &config.densities {
        let name = dens.name();
        let failed = log.iter().filter(|l| l.density == name && l.error.is_some()).count();
        failures.push((name.to_string(), failed));
        if failed as f64 > MAX_FAILURE_SHARE * config.replications as f64 {
            let example = log
                .iter()
                .find_map(|l| (l.density == name).then_some(l.error.as_ref()).flatten())
                .cloned()
                .unwrap_or_default();
            return Err(Error::Experiment(format!(
                "{failed} of {} replications failed under {name}; first error: {example}",
                config.replications
            )));
        }
    }
    Ok(McResult { kind, config: config.clone(), rows, failures, wall_clock_secs: start.elapsed().as_secs_f64(), log })
}

/// Recomputes the rejection-rate table from a replication log.
pub fn aggregate(config: &McConfig, log: &[ReplicationLog]) -> Vec<RateRow> {
    let columns = config.columns();
    let mut rows = Vec::new();
    for dens in &config.densities {
        let name = dens.name();
        let ok: Vec<&ReplicationLog> = log.iter().filter(|l| l.density == name && l.error.is_none()).collect();
        for (c, (meth, m)) in columns.iter().enumerate() {
            let n_reps = ok.len();
            let rejections = ok.iter().filter(|l| l.p_values[c] < config.alpha).count();
            let rate = if n_reps > 0 { rejections as f64 / n_reps as f64 } else { 0.0 };
            let se = if n_reps > 0 { (rate * (1.0 - rate) / n_reps as f64).sqrt() } else { 0.0 };
            let (method, scores) = method_columns(*meth);
            rows.push(RateRow { density: name.to_string(), method, scores, m: *m, rate, se, n_reps });
        }
    }
    rows
}

/// Rejection rates under the null model.
pub fn run_size_experiment(config: &McConfig) -> Result<McResult> {
    run(config, ExperimentKind::Size)
}

/// Rejection rates under the alternative, testing the null orders.
pub fn run_power_experiment(config: &McConfig) -> Result<McResult> {
    run(config, ExperimentKind::Power)
}

pub const CSV_HEADER: [&str; 7] = ["density", "method", "scores", "m", "rate", "se", "N"];

pub fn write_rates_csv<W: Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.density.clone(),
            r.method.clone(),
            r.scores.clone(),
            r.m.to_string(),
            r.rate.to_string(),
            r.se.to_string(),
            r.n_reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rates_csv<R: Read>(input: R) -> Result<Vec<RateRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Writes `<base>.csv` (the rate table) and `<base>.json` (configuration,
/// rates and the full replication log).
pub fn emit_results(result: &McResult, base: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = base.with_extension("csv");
    let json_path = base.with_extension("json");
    let mut buf = Vec::new();
    write_rates_csv(&result.rows, &mut buf)?;
    std::fs::write(&csv_path, buf)?;
    std::fs::write(&json_path, serde_json::to_vec_pretty(result)?)?;
    Ok((csv_path, json_path))
}
