use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use corank::center_outward::{feasible_n_r, make_grid, Grid};
use corank::estimation::{discretize, qmle, QmleFit};
use corank::innovations::{DensitySpec, MixtureSigma2};
use corank::io::{read_series_file, read_spec_json, write_grid, write_map, write_series_file};
use corank::montecarlo::{
    emit_results, null_spec, run_power_experiment, run_size_experiment, McConfig, MethodSpec, THREADS_ENV,
};
use corank::portmanteau::{gaussian_stat, rank_tests, TestReport};
use corank::scores::{ScoreKind, ScoreSpec};
use corank::varma::{simulate, ModelOrder, SeriesData, ThetaVector};
use corank::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "corank",
    version,
    about = "Gaussian and center-outward rank-based portmanteau tests for VARMA models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a VARMA series and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a VARMA(p, q) model by Gaussian QMLE or the one-step R-estimator.
    Fit(FitArgs),
    /// Portmanteau tests of a fitted VARMA(p, q) model.
    Test(TestArgs),
    /// Monte Carlo rejection-rate experiments.
    #[command(subcommand)]
    Mc(McCommand),
    /// Show the grid factorization for a sample size, optionally writing the grid.
    GridInfo(GridArgs),
}

#[derive(Subcommand)]
enum McCommand {
    /// Rejection rates under the null VARMA(1,1) model.
    Size(McArgs),
    /// Rejection rates under the VARMA(1,2) alternative.
    Power(McArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Density {
    Normal,
    Mixture,
    SkewT,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sigma2 {
    /// `[[7, -6], [-6, 6]]`
    Lower,
    /// `[[7, 6], [6, 6]]`
    Upper,
}

impl From<Sigma2> for MixtureSigma2 {
    fn from(s: Sigma2) -> Self {
        match s {
            Sigma2::Lower => MixtureSigma2::Lower,
            Sigma2::Upper => MixtureSigma2::Upper,
        }
    }
}

fn density_spec(kind: Density, sigma2: Sigma2, d: usize) -> DensitySpec {
    match kind {
        Density::Normal => DensitySpec::SphericalNormal,
        Density::Mixture => DensitySpec::GaussianMixture { sigma2: sigma2.into() },
        Density::SkewT => DensitySpec::skew_t3(d),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Qmle,
    Rank,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Gaussian,
    Rank,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON (`{"d","p","q","A","B"}`); defaults to the VARMA(1,1) null.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_enum, default_value = "normal")]
    density: Density,
    #[arg(long, value_enum, default_value = "lower")]
    mixture_sigma2: Sigma2,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the innovations that generated the series.
    #[arg(long)]
    innovations_out: Option<PathBuf>,
}

#[derive(Args)]
struct GridOptions {
    /// Number of radii; chosen near sqrt(n) when omitted.
    #[arg(long)]
    n_r: Option<usize>,
    /// Seed for the direction offset (d = 2) or the directions (d >= 3).
    #[arg(long, default_value_t = 1)]
    grid_seed: u64,
}

impl GridOptions {
    fn grid(&self, n: usize, d: usize) -> corank::Result<Grid> {
        make_grid(n, d, self.n_r, self.grid_seed, None)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "qmle")]
    method: FitMethod,
    #[arg(long, default_value = "vdw")]
    scores: ScoreKind,
    #[command(flatten)]
    grid: GridOptions,
    /// Round the preliminary estimate to a `c / sqrt(n)` lattice.
    #[arg(long)]
    discretize: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write the center-outward map at the estimate (rank method).
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
    m: Vec<usize>,
    #[arg(long, value_enum, default_value = "gaussian")]
    method: TestKind,
    #[arg(long, default_value = "vdw")]
    scores: ScoreKind,
    #[command(flatten)]
    grid: GridOptions,
    #[arg(long)]
    discretize: Option<f64>,
    /// Use the `K` estimated at the preliminary fit instead of re-estimating it.
    #[arg(long)]
    no_reestimate_k: bool,
    /// Premultiply the cross-covariances by the inverse residual covariance
    /// before the classical weighting.
    #[arg(long)]
    literal_normalization: bool,
    /// Write the full reports as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// JSON configuration; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from N = 300, n = 1000 instead of N = 200, n = 500.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Comma-separated: gaussian, rank:sign, rank:spearman, rank:vdw.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodSpec>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    densities: Option<Vec<Density>>,
    #[arg(long, value_enum)]
    mixture_sigma2: Option<Sigma2>,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the CORANK_THREADS environment variable.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    #[arg(long)]
    no_reestimate_k: bool,
    #[arg(long)]
    literal_normalization: bool,
    #[arg(long)]
    discretize: Option<f64>,
    /// Output base path; `.csv` and `.json` are appended.
    #[arg(long, short)]
    out: PathBuf,
}

impl McArgs {
    fn config(&self) -> anyhow::Result<McConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None if self.paper_scale => McConfig::paper_scale(),
            None => McConfig::desk(),
        };
        if self.config.is_some() && self.paper_scale {
            cfg.n = 1000;
            cfg.replications = 300;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = &self.m {
            cfg.m_values = v.clone();
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        let d = cfg.null_spec.d();
        let sigma2 = self.mixture_sigma2.unwrap_or(Sigma2::Lower);
        if let Some(v) = &self.densities {
            cfg.densities = v.iter().map(|&k| density_spec(k, sigma2, d)).collect();
        }
        if let Some(s) = self.mixture_sigma2 {
            cfg = cfg.with_mixture_sigma2(s.into());
        }
        if self.n_r.is_some() {
            cfg.grid.n_r = self.n_r;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if self.no_reestimate_k {
            cfg.reestimate_k = false;
        }
        if self.literal_normalization {
            cfg.literal_normalization = true;
        }
        if self.discretize.is_some() {
            cfg.discretize = self.discretize;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Force antipodal symmetry on or off; default on when n_S is even.
    #[arg(long)]
    symmetric: Option<bool>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn simulate_cmd(a: &SimulateArgs) -> anyhow::Result<()> {
    let spec = match &a.spec {
        Some(p) => read_spec_json(p)?,
        None => null_spec(),
    };
    let sampler = density_spec(a.density, a.mixture_sigma2, spec.d()).sampler(spec.d())?;
    let sim = simulate(&spec, a.n, &sampler, a.seed, a.burn_in)?;
    write_series_file(&sim.series.x, &a.out)?;
    if let Some(p) = &a.innovations_out {
        write_series_file(&sim.innovations, p)?;
    }
    Ok(())
}

fn load(model: &ModelArgs) -> anyhow::Result<(SeriesData, ModelOrder)> {
    let series = read_series_file(&model.series).with_context(|| format!("reading {}", model.series.display()))?;
    let order = ModelOrder::new(series.d(), model.p, model.q);
    Ok((series, order))
}

fn preliminary(series: &SeriesData, order: ModelOrder, lattice: Option<f64>) -> anyhow::Result<(QmleFit, ThetaVector)> {
    let fit = qmle(series, order.p, order.q, None)?;
    if !fit.converged {
        eprintln!(
            "warning: QMLE stopped after {} iterations with gradient norm {:.3e}",
            fit.iterations, fit.final_gradient_norm
        );
    }
    let theta_bar = match lattice {
        Some(c) => discretize(&fit.theta_hat, c, series.n())?,
        None => fit.theta_hat.clone(),
    };
    Ok((fit, theta_bar))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fit_cmd(a: &FitArgs) -> anyhow::Result<()> {
    let (series, order) = load(&a.model)?;
    let (fit, theta_bar) = preliminary(&series, order, a.discretize)?;
    let (theta, meta) = match a.method {
        FitMethod::Qmle => (
            fit.theta_hat.clone(),
            json!({
                "method": "qmle",
                "converged": fit.converged,
                "iterations": fit.iterations,
                "final_gradient_norm": fit.final_gradient_norm,
                "sigma_hat": rows(&fit.sigma_hat),
            }),
        ),
        FitMethod::Rank => {
            if order.n_params() == 0 {
                bail!("a white-noise model has no parameters to R-estimate");
            }
            let scores = ScoreSpec::named(a.scores, order.d)?;
            let grid = a.grid.grid(series.n(), order.d)?;
            let tests = rank_tests(&series, &theta_bar, order, &scores, &grid, &[], true)?;
            let rf = tests.fit.expect("models with parameters are fitted");
            if let Some(p) = &a.map_out {
                write_map(&rf.state.map, std::fs::File::create(p)?)?;
            }
            (
                rf.estimate.theta_tilde.clone(),
                json!({
                    "method": "rank",
                    "scores": a.scores.name(),
                    "n_r": grid.n_r(),
                    "n_s": grid.n_s(),
                    "n_0": grid.n_0(),
                    "theta_bar": theta_bar.as_slice(),
                    "k_hat": rows(&rf.k_preliminary.k),
                    "upsilon_condition": rf.estimate.upsilon_condition,
                    "central_sequence_norm_preliminary": rf.estimate.central_seq_at_preliminary.norm(),
                    "central_sequence_norm_estimate": rf.estimate.central_seq_at_estimate.norm(),
                }),
            )
        }
    };
    let mut doc = serde_json::to_value(theta.to_spec(order)?)?;
    doc["fit"] = meta;
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn test_cmd(a: &TestArgs) -> anyhow::Result<()> {
    let (series, order) = load(&a.model)?;
    let (fit, theta_bar) = preliminary(&series, order, a.discretize)?;
    let reports: Vec<TestReport> = match a.method {
        TestKind::Gaussian => {
            a.m.iter()
                .map(|&m| gaussian_stat(&series, &fit, m, a.literal_normalization))
                .collect::<corank::Result<_>>()?
        }
        TestKind::Rank => {
            let scores = ScoreSpec::named(a.scores, order.d)?;
            let grid = a.grid.grid(series.n(), order.d)?;
            rank_tests(&series, &theta_bar, order, &scores, &grid, &a.m, !a.no_reestimate_k)?.reports
        }
    };
    println!("{}", TestReport::CSV_HEADER);
    for r in &reports {
        println!("{}", r.csv_row());
        for w in &r.warnings {
            eprintln!("warning (m={}): {w}", r.m);
        }
    }
    if let Some(p) = &a.json_out {
        std::fs::write(p, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(())
}

fn mc_cmd(cmd: &McCommand) -> anyhow::Result<()> {
    let (args, power) = match cmd {
        McCommand::Size(a) => (a, false),
        McCommand::Power(a) => (a, true),
    };
    let cfg = args.config()?;
    let result = if power { run_power_experiment(&cfg)? } else { run_size_experiment(&cfg)? };
    let (csv, json) = emit_results(&result, &args.out)?;
    for (density, failed) in &result.failures {
        if *failed > 0 {
            eprintln!("{density}: {failed} failed replications excluded");
        }
    }
    eprintln!("wrote {} and {} ({:.1}s)", csv.display(), json.display(), result.wall_clock_secs);
    Ok(())
}

fn grid_cmd(a: &GridArgs) -> anyhow::Result<()> {
    let grid = make_grid(a.n, a.d, a.n_r, a.seed, a.symmetric)?;
    println!(
        "n={} d={} n_R={} n_S={} n_0={} symmetric={}",
        grid.n(),
        grid.d(),
        grid.n_r(),
        grid.n_s(),
        grid.n_0(),
        grid.symmetric()
    );
    let options: Vec<String> = feasible_n_r(a.n, a.d).iter().map(|v| v.to_string()).collect();
    println!("feasible n_R: {}", options.join(","));
    if let Some(p) = &a.out {
        write_grid(&grid, std::fs::File::create(p)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Test(a) => test_cmd(a),
        Command::Mc(c) => mc_cmd(c),
        Command::GridInfo(a) => grid_cmd(a),
    }
}

fn is_experiment_error(err: &anyhow::Error) -> bool {
    matches!(err.downcast_ref::<Error>(), Some(Error::Experiment(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_experiment_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
