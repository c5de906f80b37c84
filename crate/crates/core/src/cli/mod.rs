//! Command-line front end: synthetic data, estimation runs, weight sweeps and
//! the two worked examples.
//!
//! Every subcommand accepts `--config FILE`, a TOML file of `key = value`
//! pairs whose keys are the long flag names. Flags given on the command line
//! take precedence over the file.

mod examples;
mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::divergences::{self, Divergence};
use crate::dual_solvers::{
    solve, solve_exact, Barrier, DualSolution, MomentConstraint, RegularizationConfig, SolveStatus,
    SolverOptions,
};
use crate::moments::{
    default_burn_in, sample_covariances, shift_pair, state_covariance_from_data, CovarianceWindow,
    Estimator, StateCovariance, TimeSeries,
};
use crate::spectral_core::{
    eval_transfer, fourier_coeffs, make_grid, spectral_radius, FrequencyGrid, SpectralSamples,
    StateSpacePair, DEFAULT_GRID_SIZE,
};

pub use examples::{example1_checks, example2_checks, Check, ExampleSettings};
pub use io::Report;

/// Exit code for a failed example assertion.
pub const EXIT_EXAMPLE_FAILED: i32 = 5;
pub const EXIT_USAGE: i32 = 1;
const DEFAULT_ORDER: usize = 4;
const SYNTH_BURN_IN: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Library(#[from] crate::Error),
}

pub fn status_exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::Boundary => 2,
        SolveStatus::Unbounded => 3,
        SolveStatus::MaxIter => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "specfit", version, about = "Spectral density fitting by convex duality")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an ARMA process driven by seeded unit-variance Gaussian noise.
    Synth(SynthArgs),
    /// Fit a spectrum to a time series, a covariance list or a state covariance.
    Estimate(EstimateArgs),
    /// Solve one regularized problem per weight and tabulate the results.
    Sweep(SweepArgs),
    /// Quadratic distance: primal regularization only changes the prior.
    Example1(ExampleArgs),
    /// KL with a log barrier equals a prior shift; indefinite data is unbounded.
    Example2(ExampleArgs),
}

/// Fills every unset field of `self` from `other`.
macro_rules! merge_fields {
    ($dst:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.take(); } )+
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SynthArgs {
    /// TOML file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// AR coefficients a₁,…,a_p of y_t = Σ a_k y_{t−k} + gain·(e_t + Σ b_k e_{t−k}).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub ar: Option<Vec<f64>>,
    /// MA coefficients b₁,…,b_q.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub ma: Option<Vec<f64>>,
    #[arg(long)]
    pub gain: Option<f64>,
    /// Number of samples T.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (one sample per line); standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct EstimateArgs {
    /// TOML file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Time series, one sample per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Covariance list r₀, r₁, …, one lag per line.
    #[arg(long)]
    pub covariances: Option<PathBuf>,
    /// State covariance Σ as a matrix file.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// (A, B) matrix file; the shift pair is used when omitted.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// kl, quadratic, itakura-saito or hellinger.
    #[arg(long)]
    pub divergence: Option<String>,
    /// const:C, C, file:PATH or arma:ar=..;ma=..;gain=..
    #[arg(long)]
    pub prior: Option<String>,
    /// Model order n (number of lags after r₀).
    #[arg(long)]
    pub order: Option<usize>,
    /// Number of frequency nodes N.
    #[arg(long)]
    pub grid: Option<usize>,
    /// none, primal or dual.
    #[arg(long)]
    pub reg: Option<String>,
    /// Primal weight w (W = w·I).
    #[arg(long)]
    pub weight: Option<f64>,
    /// Barrier weight λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// b1, b2 or blog.
    #[arg(long)]
    pub barrier: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// biased or unbiased sample covariances.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Spectrum CSV; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Key-value report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: EstimateArgs,
    /// Weights to sweep (w for primal, λ for dual regularization).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ExampleArgs {
    /// TOML file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// PASS/FAIL report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn from_table<T: for<'de> Deserialize<'de>>(table: toml::Table, path: &Path) -> Result<T, CliError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl SynthArgs {
    fn resolve_config(mut self) -> Result<Self, CliError> {
        if let Some(path) = self.config.clone() {
            let mut file: SynthArgs = from_table(load_table(&path)?, &path)?;
            merge_fields!(self, file; ar, ma, gain, samples, seed, output);
        }
        Ok(self)
    }
}

impl EstimateArgs {
    fn merge_from(&mut self, mut file: EstimateArgs) {
        merge_fields!(self, file;
            input, covariances, sigma, system, divergence, prior, order, grid, reg,
            weight, lambda, barrier, tol, max_iter, estimator, output, report);
    }

    fn resolve_config(mut self) -> Result<Self, CliError> {
        if let Some(path) = self.config.clone() {
            let file = from_table(load_table(&path)?, &path)?;
            self.merge_from(file);
        }
        Ok(self)
    }
}

impl SweepArgs {
    fn resolve_config(mut self) -> Result<Self, CliError> {
        if let Some(path) = self.base.config.clone() {
            let mut table = load_table(&path)?;
            let weights = table.remove("weights");
            let file = from_table(table, &path)?;
            self.base.merge_from(file);
            if self.weights.is_none() {
                if let Some(w) = weights {
                    let list: Vec<f64> = w
                        .try_into()
                        .map_err(|e| CliError::Usage(format!("{}: weights: {e}", path.display())))?;
                    self.weights = Some(list);
                }
            }
        }
        Ok(self)
    }
}

impl ExampleArgs {
    fn resolve_config(mut self) -> Result<Self, CliError> {
        if let Some(path) = self.config.clone() {
            let mut file: ExampleArgs = from_table(load_table(&path)?, &path)?;
            merge_fields!(self, file; grid, seed, tol, max_iter, report);
        }
        Ok(self)
    }
}

/// Prior spectrum description.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Constant(f64),
    File(PathBuf),
    Arma { ar: Vec<f64>, ma: Vec<f64>, gain: f64 },
}

fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("not a number: {t:?}")))
        })
        .collect()
}

impl FromStr for PriorSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("const:") {
            let c = parse_list(rest)?;
            return match c.as_slice() {
                [c] => Ok(Self::Constant(*c)),
                _ => Err(CliError::Usage(format!("bad constant prior {s:?}"))),
            };
        }
        if let Some(rest) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(rest)));
        }
        if let Some(rest) = s.strip_prefix("arma:") {
            let (mut ar, mut ma, mut gain) = (Vec::new(), Vec::new(), 1.0);
            for part in rest.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("bad ARMA prior field {part:?}")))?;
                match key.trim() {
                    "ar" => ar = parse_list(value)?,
                    "ma" => ma = parse_list(value)?,
                    "gain" => match parse_list(value)?.as_slice() {
                        [g] => gain = *g,
                        _ => return Err(CliError::Usage(format!("bad gain {value:?}"))),
                    },
                    other => return Err(CliError::Usage(format!("unknown ARMA prior key {other:?}"))),
                }
            }
            return Ok(Self::Arma { ar, ma, gain });
        }
        s.parse::<f64>()
            .map(Self::Constant)
            .map_err(|_| CliError::Usage(format!("unrecognized prior {s:?}")))
    }
}

/// `Σ a_k z^k` terms as a companion matrix; its spectral radius is the
/// largest pole modulus of `1/(1 − Σ a_k z^k)`.
fn ar_pole_radius(ar: &[f64]) -> f64 {
    let p = ar.len();
    if p == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            ar[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    spectral_radius(&companion)
}

fn check_stable_ar(ar: &[f64]) -> Result<(), CliError> {
    let radius = ar_pole_radius(ar);
    if radius >= 1.0 {
        return Err(CliError::Library(crate::Error::Unstable(radius)));
    }
    Ok(())
}

/// `gain²·|1 + Σ b_k e^{ikθ}|² / |1 − Σ a_k e^{ikθ}|²`.
pub fn arma_psd(ar: &[f64], ma: &[f64], gain: f64, theta: f64) -> f64 {
    let z = Complex64::from_polar(1.0, theta);
    let poly = |coeffs: &[f64], sign: f64| {
        let mut acc = Complex64::new(1.0, 0.0);
        let mut zk = Complex64::new(1.0, 0.0);
        for c in coeffs {
            zk *= z;
            acc += zk * (sign * c);
        }
        acc.norm_sqr()
    };
    gain * gain * poly(ma, 1.0) / poly(ar, -1.0)
}

impl PriorSpec {
    pub fn samples(&self, grid: &FrequencyGrid) -> Result<SpectralSamples, CliError> {
        let samples = match self {
            Self::Constant(c) => SpectralSamples::constant(grid, *c),
            Self::File(path) => {
                let values = io::read_numbers(path)?;
                if values.len() != grid.len() {
                    return Err(CliError::Input(format!(
                        "{}: prior has {} samples, grid has {}",
                        path.display(),
                        values.len(),
                        grid.len()
                    )));
                }
                SpectralSamples::new(grid, values)?
            }
            Self::Arma { ar, ma, gain } => {
                check_stable_ar(ar)?;
                SpectralSamples::from_fn(grid, |t| arma_psd(ar, ma, *gain, t))
            }
        };
        if !samples.is_positive() || samples.values().iter().any(|v| !v.is_finite()) {
            return Err(CliError::Library(crate::Error::NonPositivePrior(samples.min())));
        }
        Ok(samples)
    }
}

/// Simulates `T` samples; a fixed burn-in discards the start-up transient.
pub fn simulate_arma(ar: &[f64], ma: &[f64], gain: f64, samples: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    check_stable_ar(ar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = if ar.is_empty() { 0 } else { SYNTH_BURN_IN };
    let total = burn + samples;
    let mut e_hist = vec![0.0; ma.len()];
    let mut y_hist = vec![0.0; ar.len()];
    let mut out = Vec::with_capacity(samples);
    for t in 0..total {
        let e: f64 = StandardNormal.sample(&mut rng);
        let mut y = e + ma.iter().zip(&e_hist).map(|(b, h)| b * h).sum::<f64>();
        y *= gain;
        y += ar.iter().zip(&y_hist).map(|(a, h)| a * h).sum::<f64>();
        if !ma.is_empty() {
            e_hist.rotate_right(1);
            e_hist[0] = e;
        }
        if !ar.is_empty() {
            y_hist.rotate_right(1);
            y_hist[0] = y;
        }
        if t >= burn {
            out.push(y);
        }
    }
    Ok(out)
}

fn cmd_synth(args: SynthArgs) -> Result<i32, CliError> {
    let args = args.resolve_config()?;
    let ar = args.ar.unwrap_or_default();
    let ma = args.ma.unwrap_or_default();
    let gain = args.gain.unwrap_or(1.0);
    let samples = args
        .samples
        .ok_or_else(|| CliError::Usage("synth needs --samples".into()))?;
    let seed = args
        .seed
        .ok_or_else(|| CliError::Usage("synth needs --seed".into()))?;
    if samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    if !gain.is_finite() || ar.iter().chain(&ma).any(|v| !v.is_finite()) {
        return Err(CliError::Usage("ARMA parameters must be finite".into()));
    }
    let y = simulate_arma(&ar, &ma, gain, samples, seed)?;
    emit(args.output.as_deref(), &io::series_text(&y))?;
    Ok(0)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Which regularization to apply, before it is sized to the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegKind {
    None,
    Primal { weight: f64 },
    Dual { lambda: f64, barrier: Barrier },
}

impl RegKind {
    fn config(self, dim: usize) -> RegularizationConfig {
        match self {
            Self::None => RegularizationConfig::None,
            Self::Primal { weight } => RegularizationConfig::scalar_weight(weight, dim),
            Self::Dual { lambda, barrier } => RegularizationConfig::Dual { lambda, barrier },
        }
    }

    fn with_weight(self, w: f64) -> Self {
        match self {
            Self::None => Self::None,
            Self::Primal { .. } => Self::Primal { weight: w },
            Self::Dual { barrier, .. } => Self::Dual { lambda: w, barrier },
        }
    }

    fn describe(self) -> String {
        match self {
            Self::None => "none".into(),
            Self::Primal { weight } => format!("primal(w = {weight})"),
            Self::Dual { lambda, barrier } => format!("dual(lambda = {lambda}, barrier = {})", barrier.name()),
        }
    }
}

/// Validated estimation settings.
#[derive(Debug)]
pub struct RunConfig {
    pub divergence: Box<dyn Divergence>,
    pub prior: SpectralSamples,
    pub grid: FrequencyGrid,
    pub constraint: MomentConstraint,
    pub reg: RegKind,
    pub opts: SolverOptions,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_args(args: &EstimateArgs, require_weight: bool) -> Result<Self, CliError> {
        let name = args.divergence.as_deref().unwrap_or("kl");
        let divergence = divergences::by_name(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown divergence {name:?}; expected one of {}",
                divergences::NAMES.join(", ")
            ))
        })?;
        let grid = make_grid(args.grid.unwrap_or(DEFAULT_GRID_SIZE))?;

        let reg = match args.reg.as_deref().unwrap_or("none") {
            "none" => RegKind::None,
            "primal" => RegKind::Primal {
                weight: match args.weight {
                    Some(w) => positive("weight", w)?,
                    None if !require_weight => 1.0,
                    None => return Err(CliError::Usage("--reg primal needs --weight".into())),
                },
            },
            "dual" => {
                let barrier = match args.barrier.as_deref() {
                    None => Barrier::B1,
                    Some(b) => Barrier::from_name(b)
                        .ok_or_else(|| CliError::Usage(format!("unknown barrier {b:?}")))?,
                };
                let lambda = match args.lambda {
                    Some(l) => positive("lambda", l)?,
                    None if !require_weight => 1.0,
                    None => return Err(CliError::Usage("--reg dual needs --lambda".into())),
                };
                RegKind::Dual { lambda, barrier }
            }
            other => return Err(CliError::Usage(format!("unknown regularization {other:?}"))),
        };

        let mut opts = SolverOptions::default();
        if let Some(t) = args.tol {
            opts.tol = positive("tol", t)?;
        }
        if let Some(m) = args.max_iter {
            if m == 0 {
                return Err(CliError::Usage("--max-iter must be positive".into()));
            }
            opts.max_iter = m;
        }
        let estimator = match args.estimator.as_deref().unwrap_or("biased") {
            "biased" => Estimator::Biased,
            "unbiased" => Estimator::Unbiased,
            other => return Err(CliError::Usage(format!("unknown estimator {other:?}"))),
        };

        let prior_spec: PriorSpec = args.prior.as_deref().unwrap_or("const:1").parse()?;
        let sources = [&args.input, &args.covariances, &args.sigma]
            .iter()
            .filter(|s| s.is_some())
            .count();
        if sources != 1 {
            return Err(CliError::Usage(
                "give exactly one of --input, --covariances, --sigma".into(),
            ));
        }
        let system = args.system.as_deref().map(io::read_system).transpose()?;
        if system.is_some() && args.covariances.is_some() {
            return Err(CliError::Usage("--system does not apply to --covariances".into()));
        }
        let constraint = if let Some(path) = &args.input {
            let series = TimeSeries::new(io::read_numbers(path)?)?;
            match &system {
                Some(sys) => {
                    let sigma = state_covariance_from_data(sys, &series, default_burn_in(sys))?;
                    MomentConstraint::state(sigma, eval_transfer(sys, &grid)?)?
                }
                None => {
                    let n = args.order.unwrap_or(DEFAULT_ORDER);
                    MomentConstraint::Covariances(sample_covariances(&series, n, estimator)?)
                }
            }
        } else if let Some(path) = &args.covariances {
            let mut lags = io::read_numbers(path)?;
            if let Some(n) = args.order {
                if n + 1 > lags.len() {
                    return Err(CliError::Input(format!(
                        "{}: order {n} needs {} lags, file has {}",
                        path.display(),
                        n + 1,
                        lags.len()
                    )));
                }
                lags.truncate(n + 1);
            }
            MomentConstraint::Covariances(CovarianceWindow::new(lags)?)
        } else {
            let path = args.sigma.as_ref().expect("one source present");
            let sigma = StateCovariance::new(io::read_matrix(path)?)?;
            let sys = match system {
                Some(s) => s,
                None => shift_pair(sigma.dim() - 1),
            };
            MomentConstraint::state(sigma, eval_transfer(&sys, &grid)?)?
        };
        if let MomentConstraint::Covariances(r) = &constraint {
            if r.degree() >= grid.len() / 2 {
                return Err(CliError::Library(crate::Error::OrderTooLarge {
                    order: r.degree(),
                    grid: grid.len(),
                    limit: grid.len() / 2,
                }));
            }
        }
        let prior = prior_spec.samples(&grid)?;
        Ok(Self {
            divergence,
            prior,
            grid,
            constraint,
            reg,
            opts,
            output: args.output.clone(),
            report: args.report.clone(),
        })
    }

    pub fn solve_with(&self, reg: RegKind) -> crate::Result<DualSolution> {
        let config = reg.config(self.constraint.dim());
        solve(self.divergence.as_ref(), &self.prior, &self.constraint, &config, &self.opts)
    }
}

fn estimate_report(cfg: &RunConfig, sol: &DualSolution) -> crate::Result<Report> {
    let mut rep = Report::default();
    rep.set("status", sol.status);
    rep.set("divergence", cfg.divergence.name());
    rep.set(
        "mode",
        if cfg.constraint.is_toeplitz() { "covariances" } else { "state" },
    );
    rep.set("grid", cfg.grid.len());
    rep.set("regularization", cfg.reg.describe());
    rep.set("iterations", sol.iterations);
    rep.num("objective", sol.objective);
    rep.num(
        "distance",
        divergences::total_distance(cfg.divergence.as_ref(), &sol.phi, &cfg.prior)?,
    );
    rep.num("residual_norm", sol.residual_norm);
    rep.num("relative_residual", sol.residual_norm / (1.0 + sol.sigma_norm));
    rep.num("moment_defect_norm", sol.defect.norm());
    rep.num("min_margin", sol.min_margin);
    match &cfg.constraint {
        MomentConstraint::Covariances(r) => {
            rep.vector("target_lags", r.lags());
            let matched = fourier_coeffs(&sol.phi, r.degree())?;
            rep.vector("matched_lags", matched.lags());
            rep.vector("multiplier_q", sol.variable.params().as_slice());
        }
        MomentConstraint::State { sigma, .. } => {
            rep.matrix("target_sigma", sigma.matrix());
            rep.matrix("matched_sigma", &(sigma.matrix() + &sol.defect));
            rep.vector("multiplier_params", sol.variable.params().as_slice());
        }
    }
    if let Some(dev) = &sol.deviation {
        rep.matrix("deviation", dev);
        rep.num("deviation_norm", dev.norm());
    }
    Ok(rep)
}

fn cmd_estimate(args: EstimateArgs) -> Result<i32, CliError> {
    let args = args.resolve_config()?;
    let cfg = RunConfig::from_args(&args, false)?;
    let sol = cfg.solve_with(cfg.reg)?;
    emit(cfg.output.as_deref(), &io::spectrum_csv(&sol.phi, &cfg.prior, &sol.q))?;
    let rep = estimate_report(&cfg, &sol)?;
    if let Some(path) = &cfg.report {
        io::write_text(path, &rep.render())?;
    }
    if sol.status != SolveStatus::Converged {
        eprintln!("{}", sol.status);
    }
    Ok(status_exit_code(sol.status))
}

struct SweepRow {
    weight: f64,
    status: String,
    deviation: f64,
    distance: f64,
    defect: f64,
    sup_to_exact: f64,
}

fn nonincreasing(values: &[f64]) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
}

fn cmd_sweep(args: SweepArgs) -> Result<i32, CliError> {
    let args = args.resolve_config()?;
    let weights = args
        .weights
        .clone()
        .ok_or_else(|| CliError::Usage("sweep needs --weights".into()))?;
    if weights.is_empty() {
        return Err(CliError::Usage("--weights is empty".into()));
    }
    for &w in &weights {
        positive("weights", w)?;
    }
    let cfg = RunConfig::from_args(&args.base, false)?;
    if cfg.reg == RegKind::None {
        return Err(CliError::Usage("sweep needs --reg primal or --reg dual".into()));
    }
    let exact = solve_exact(cfg.divergence.as_ref(), &cfg.prior, &cfg.constraint, &cfg.opts)
        .ok()
        .filter(|s| s.converged());

    let rows: Vec<SweepRow> = weights
        .par_iter()
        .map(|&w| match cfg.solve_with(cfg.reg.with_weight(w)) {
            Ok(sol) => {
                let deviation = match &sol.deviation {
                    Some(d) => d.norm(),
                    None => sol.rhs.norm(),
                };
                SweepRow {
                    weight: w,
                    status: sol.status.to_string(),
                    deviation,
                    distance: divergences::total_distance(cfg.divergence.as_ref(), &sol.phi, &cfg.prior)
                        .unwrap_or(f64::NAN),
                    defect: sol.defect.norm(),
                    sup_to_exact: exact
                        .as_ref()
                        .and_then(|e| e.phi.sup_distance(&sol.phi).ok())
                        .unwrap_or(f64::NAN),
                }
            }
            Err(e) => SweepRow {
                weight: w,
                status: format!("Error({e})").replace(',', ";"),
                deviation: f64::NAN,
                distance: f64::NAN,
                defect: f64::NAN,
                sup_to_exact: f64::NAN,
            },
        })
        .collect();

    let mut out = String::from("weight,status,deviation_norm,distance,moment_defect,sup_to_exact\n");
    for r in &rows {
        out.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.weight, r.status, r.deviation, r.distance, r.defect, r.sup_to_exact
        ));
    }
    let devs: Vec<f64> = rows.iter().map(|r| r.deviation).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.sup_to_exact).collect();
    let statuses: Vec<&str> = rows.iter().map(|r| r.status.as_str()).collect();
    out.push_str(&format!("# regularization = {}\n", cfg.reg.with_weight(weights[0]).describe()));
    out.push_str(&format!("# deviation_norm_nonincreasing = {}\n", nonincreasing(&devs)));
    out.push_str(&format!(
        "# sup_to_exact_nonincreasing = {}\n",
        exact.is_some() && nonincreasing(&sups)
    ));
    out.push_str(&format!(
        "# all_converged = {}\n",
        statuses.iter().all(|s| *s == "Converged")
    ));
    out.push_str(&format!(
        "# all_boundary = {}\n",
        statuses.iter().all(|s| *s == "Boundary")
    ));
    emit(cfg.output.as_deref(), &out)?;
    Ok(0)
}

fn cmd_example(args: ExampleArgs, which: u8) -> Result<i32, CliError> {
    let args = args.resolve_config()?;
    let mut settings = ExampleSettings::default();
    if let Some(g) = args.grid {
        make_grid(g)?;
        settings.grid = g;
    }
    if let Some(s) = args.seed {
        settings.seed = s;
    }
    if let Some(t) = args.tol {
        settings.opts.tol = positive("tol", t)?;
    }
    if let Some(m) = args.max_iter {
        if m == 0 {
            return Err(CliError::Usage("--max-iter must be positive".into()));
        }
        settings.opts.max_iter = m;
    }
    let checks = if which == 1 {
        example1_checks(&settings)?
    } else {
        example2_checks(&settings)?
    };
    let mut text = String::new();
    for c in &checks {
        text.push_str(&c.line());
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = &args.report {
        io::write_text(path, &text)?;
    }
    Ok(if checks.iter().all(|c| c.pass) { 0 } else { EXIT_EXAMPLE_FAILED })
}

pub fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Example1(a) => cmd_example(a, 1),
        Command::Example2(a) => cmd_example(a, 2),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

/// Shift-pair `Σ` helper used by the examples.
pub(crate) fn shift_pair_constraint(sigma: DMatrix<f64>, grid: &FrequencyGrid) -> crate::Result<MomentConstraint> {
    let sys: StateSpacePair = shift_pair(sigma.nrows() - 1);
    MomentConstraint::state(StateCovariance::new(sigma)?, eval_transfer(&sys, grid)?)
}

pub(crate) fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}
