//! Exact, primal-regularized and barrier-regularized dual solvers.
//!
//! All three regimes maximize a concave objective over the open domain where
//! `F(Q; Ψ)` is positive (intersected with the barrier domain), using damped
//! Newton steps, a fraction-to-boundary rule and Armijo backtracking. The
//! outcome is reported as a [`SolveStatus`]; `Boundary` and `Unbounded` are
//! runtime certificates of the two ways an estimate can fail to have an
//! interior interpolant.

mod oracle;
mod problem;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::divergences::Divergence;
use crate::error::{Error, Result};
use crate::spectral_core::{PseudoPolynomial, SpectralSamples};

pub use oracle::{brute_force_primal, primal_objective, PrimalOracle};
pub use problem::{lambda_to_params, params_to_lambda, DualProblem, MomentConstraint};

/// Unbounded when `‖x‖` exceeds this multiple of `1 + ‖Σ‖_F` ...
const UNBOUNDED_NORM_FACTOR: f64 = 1e6;
/// ... while the objective kept increasing over this many accepted steps.
const UNBOUNDED_WINDOW: usize = 10;
/// Boundary after this many consecutive truncated steps ...
const BOUNDARY_TRUNCATIONS: usize = 20;
/// ... with the smallest nodewise margin below this.
const BOUNDARY_MARGIN: f64 = 1e-8;
const MAX_BACKTRACKS: usize = 80;

/// Which sign the multiplier carries in the Lagrangian.
///
/// `Standard` uses `D(Φ‖Ψ) + tr{Λ(∫GΦG* − Σ)}` (so `F = Ψ/Q` for KL with
/// `Q > 0`); `Reversed` uses `D(Φ‖Ψ) + tr{Λ(Σ − ∫GΦG*)}`. Since `Λ` ranges over
/// all symmetric matrices the two are reparametrizations `Λ ↦ −Λ` of each
/// other and produce the same fitted spectrum. Barriers always act on the
/// standard-convention `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    #[default]
    Standard,
    Reversed,
}

impl SignConvention {
    pub fn sign(self) -> f64 {
        match self {
            Self::Standard => 1.0,
            Self::Reversed => -1.0,
        }
    }
}

/// Barrier term added to the dual in the dual-regularized regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Barrier {
    /// `∫ log(1 + Q)`.
    B1,
    /// `1 − ∫ 1/(1 + Q)`.
    B2,
    /// `∫ log Q`; turns KL into the exact problem with prior `Ψ + λ`.
    Log,
}

impl Barrier {
    pub fn integrand(self, q: f64) -> f64 {
        match self {
            Self::B1 => q.ln_1p(),
            Self::B2 => -1.0 / (1.0 + q),
            Self::Log => q.ln(),
        }
    }

    /// Constant outside the integral (the `1` in `B₂`).
    pub fn offset(self) -> f64 {
        match self {
            Self::B2 => 1.0,
            _ => 0.0,
        }
    }

    pub fn derivative(self, q: f64) -> f64 {
        match self {
            Self::B1 => 1.0 / (1.0 + q),
            Self::B2 => 1.0 / ((1.0 + q) * (1.0 + q)),
            Self::Log => 1.0 / q,
        }
    }

    pub fn second_derivative(self, q: f64) -> f64 {
        match self {
            Self::B1 => -1.0 / ((1.0 + q) * (1.0 + q)),
            Self::B2 => -2.0 / (1.0 + q).powi(3),
            Self::Log => -1.0 / (q * q),
        }
    }

    /// Affine margin of the barrier domain.
    pub fn margin(self, q: f64) -> f64 {
        match self {
            Self::B1 | Self::B2 => 1.0 + q,
            Self::Log => q,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::B1 => "b1",
            Self::B2 => "b2",
            Self::Log => "blog",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "b1" => Some(Self::B1),
            "b2" => Some(Self::B2),
            "blog" => Some(Self::Log),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegularizationConfig {
    None,
    /// Penalty `tr{ΔWΔ}` on the matching defect. `W` is `m×m` for a state
    /// covariance; for a covariance window it weights the lag deviation
    /// vector, `δᵀWδ`.
    Primal { weight: DMatrix<f64> },
    /// Barrier `λB(Q)` added to the dual.
    Dual { lambda: f64, barrier: Barrier },
}

impl RegularizationConfig {
    /// `w·I`.
    pub fn scalar_weight(w: f64, dim: usize) -> Self {
        Self::Primal {
            weight: DMatrix::identity(dim, dim) * w,
        }
    }

    /// `w` times the squared norm of the two-sided lag sequence
    /// `δ_{−n}, …, δ_n`, i.e. `W = w·diag(1, 2, …, 2)` on `(δ₀, …, δ_n)`.
    /// The dual penalty is then `(1/(4w)) ∫ Q²`.
    pub fn two_sided_lag_weight(w: f64, n: usize) -> Self {
        let diag = DVector::from_fn(n + 1, |k, _| if k == 0 { w } else { 2.0 * w });
        Self::Primal {
            weight: DMatrix::from_diagonal(&diag),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::None => Ok(()),
            Self::Primal { weight } => {
                if weight.nrows() != weight.ncols() {
                    return Err(Error::InvalidRegularization("weight must be square".into()));
                }
                if weight.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidRegularization("non-finite weight".into()));
                }
                if (weight - weight.transpose()).amax() > 1e-12 * weight.amax().max(1.0) {
                    return Err(Error::InvalidRegularization("weight must be symmetric".into()));
                }
                if weight.clone().cholesky().is_none() {
                    return Err(Error::InvalidRegularization(
                        "weight is not positive definite".into(),
                    ));
                }
                Ok(())
            }
            Self::Dual { lambda, .. } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::InvalidRegularization(format!(
                        "barrier weight must be positive, got {lambda}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative Tikhonov damping of the Newton system, scaled by `‖H‖`.
    pub initial_damping: f64,
    pub backtrack: f64,
    /// Fraction of the distance to the domain boundary a step may cover.
    pub fraction_to_boundary: f64,
    pub armijo: f64,
    pub convention: SignConvention,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            initial_damping: 1e-10,
            backtrack: 0.5,
            fraction_to_boundary: 0.99,
            armijo: 1e-4,
            convention: SignConvention::Standard,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol", self.tol),
            ("initial_damping", self.initial_damping),
            ("armijo", self.armijo),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidOptions(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidOptions("max_iter must be positive".into()));
        }
        for (name, v) in [
            ("backtrack", self.backtrack),
            ("fraction_to_boundary", self.fraction_to_boundary),
            ("armijo", self.armijo),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidOptions(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// The iterates pile up on the boundary of the dual domain with a
    /// nonzero residual: the optimum has `F(Q; Ψ) = 0` somewhere.
    Boundary,
    /// The objective grows without bound: no interpolant exists.
    Unbounded,
    MaxIter,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Converged => "Converged",
            Self::Boundary => "Boundary",
            Self::Unbounded => "Unbounded",
            Self::MaxIter => "MaxIter",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimal multiplier in the parametrization that was solved for.
#[derive(Debug, Clone, PartialEq)]
pub enum DualVariable {
    Toeplitz(PseudoPolynomial),
    General(DMatrix<f64>),
}

impl DualVariable {
    pub fn params(&self) -> DVector<f64> {
        match self {
            Self::Toeplitz(q) => DVector::from_column_slice(q.coeffs()),
            Self::General(lambda) => lambda_to_params(lambda),
        }
    }

    /// Pseudo-polynomial of a shift-pair multiplier: `q₀ = tr Λ`,
    /// `q_k = 2 Σ_i Λ_{i,i+k}`.
    pub fn to_pseudopolynomial(&self) -> PseudoPolynomial {
        match self {
            Self::Toeplitz(q) => q.clone(),
            Self::General(lambda) => {
                let m = lambda.nrows();
                let coeffs = (0..m)
                    .map(|k| {
                        let band: f64 = (0..m - k).map(|i| lambda[(i, i + k)]).sum();
                        if k == 0 {
                            band
                        } else {
                            2.0 * band
                        }
                    })
                    .collect();
                PseudoPolynomial::new(coeffs).expect("finite multiplier")
            }
        }
    }

    /// One shift-pair `Λ` representing `q`: `Λ₀₀ = q₀`, `Λ₀ₖ = Λₖ₀ = q_k/2`.
    pub fn lambda_for(q: &PseudoPolynomial) -> DMatrix<f64> {
        let m = q.degree() + 1;
        let c = q.coeffs();
        let mut lambda = DMatrix::zeros(m, m);
        lambda[(0, 0)] = c[0];
        for k in 1..m {
            lambda[(0, k)] = 0.5 * c[k];
            lambda[(k, 0)] = 0.5 * c[k];
        }
        lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub residual_norm: f64,
    pub min_margin: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub variable: DualVariable,
    pub convention: SignConvention,
    /// `Q(θ_j)` in the solution's convention.
    pub q: SpectralSamples,
    pub phi: SpectralSamples,
    /// `Δ̂`, primal regularization only.
    pub deviation: Option<DMatrix<f64>>,
    /// Matching defect `∫GFG* − Σ`.
    pub defect: DMatrix<f64>,
    /// Right-hand side of the regime's stationarity identity.
    pub rhs: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    pub residual_norm: f64,
    pub sigma_norm: f64,
    /// Dual value with the divergence constants restored.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub min_margin: f64,
    pub trace: Vec<IterationRecord>,
}

impl DualSolution {
    /// `Λ` under the opposite-sign Lagrangian, i.e. the multiplier appearing
    /// in `Δ̂ = −½W⁻¹Λ`.
    pub fn lambda_reversed(&self, problem: &DualProblem<'_>) -> DMatrix<f64> {
        let lambda = problem.lambda(&self.variable.params());
        match self.convention {
            SignConvention::Reversed => lambda,
            SignConvention::Standard => -lambda,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Maximizes the dual of the exact moment-matching problem.
pub fn solve_exact(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    moments: &MomentConstraint,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    solve(div, prior, moments, &RegularizationConfig::None, opts)
}

/// Maximizes `Ω₀ − ¼tr{ΛW⁻¹Λ}`.
pub fn solve_primal_regularized(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    moments: &MomentConstraint,
    weight: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let reg = RegularizationConfig::Primal {
        weight: weight.clone(),
    };
    solve(div, prior, moments, &reg, opts)
}

/// Maximizes `Ω₀ + λB(Q)`.
pub fn solve_dual_regularized(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    moments: &MomentConstraint,
    lambda: f64,
    barrier: Barrier,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let reg = RegularizationConfig::Dual { lambda, barrier };
    solve(div, prior, moments, &reg, opts)
}

/// Dispatches on the regularization kind.
pub fn solve(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    moments: &MomentConstraint,
    reg: &RegularizationConfig,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    opts.validate()?;
    let problem = DualProblem::new(div, prior, moments, reg, opts.convention)?;
    let x0 = problem.initial_point()?;
    let (x, status, iterations, trace) = newton(&problem, x0, opts)?;
    if status == SolveStatus::Unbounded && matches!(reg, RegularizationConfig::Primal { .. }) {
        return Err(Error::Internal(
            "primal-regularized dual is strictly concave but diverged".into(),
        ));
    }
    Ok(package(&problem, &x, status, iterations, trace))
}

/// `Σ − ∫GFG* − RHS` at the solution's multiplier.
pub fn stationarity_residual(
    sol: &DualSolution,
    div: &dyn Divergence,
    prior: &SpectralSamples,
    moments: &MomentConstraint,
    reg: &RegularizationConfig,
) -> Result<DMatrix<f64>> {
    let problem = DualProblem::new(div, prior, moments, reg, sol.convention)?;
    let x = sol.variable.params();
    if x.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "multiplier has {} parameters, problem expects {}",
            x.len(),
            problem.dim()
        )));
    }
    Ok(problem.residual(&x))
}

fn package(
    problem: &DualProblem<'_>,
    x: &DVector<f64>,
    status: SolveStatus,
    iterations: usize,
    trace: Vec<IterationRecord>,
) -> DualSolution {
    let convention = problem.convention();
    let variable = match problem.constraint() {
        MomentConstraint::Covariances(_) => DualVariable::Toeplitz(
            PseudoPolynomial::new(x.iter().copied().collect()).expect("finite iterate"),
        ),
        MomentConstraint::State { .. } => {
            DualVariable::General(params_to_lambda(x, problem.constraint().dim()))
        }
    };
    let q_std = problem.q_values(x);
    let q = SpectralSamples::new(
        problem.prior().grid(),
        q_std.iter().map(|v| v * convention.sign()).collect(),
    )
    .expect("iterates stay finite");
    let residual = problem.residual(x);
    let sigma = problem.sigma().matrix().clone();
    DualSolution {
        variable,
        convention,
        q,
        phi: problem.spectrum(x),
        deviation: problem.deviation(x),
        defect: problem.matched_moments(x) - &sigma,
        rhs: problem.stationarity_rhs(x),
        residual_norm: residual.norm(),
        residual,
        sigma_norm: sigma.norm(),
        objective: problem.objective_with_constants(x),
        status,
        iterations,
        min_margin: problem.min_margin(x),
        trace,
    }
}

/// Solves `(−H + μI) d = g` by Cholesky, raising `μ` until it succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let p = g.len();
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let mut mu = damping * scale;
    for _ in 0..12 {
        let sys = -h + DMatrix::identity(p, p) * mu;
        if let Some(chol) = sys.cholesky() {
            let d = chol.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        mu *= 100.0;
    }
    None
}

type NewtonOutcome = (DVector<f64>, SolveStatus, usize, Vec<IterationRecord>);

fn newton(problem: &DualProblem<'_>, x0: DVector<f64>, opts: &SolverOptions) -> Result<NewtonOutcome> {
    let sigma_norm = problem.sigma().frobenius_norm();
    let stop = opts.tol * (1.0 + sigma_norm);
    let norm_cap = UNBOUNDED_NORM_FACTOR * (1.0 + sigma_norm);

    let mut x = x0;
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::NoInteriorStart("objective not finite at start".into()));
    }
    let mut trace = Vec::new();
    let mut history = vec![f];
    let mut truncations = 0usize;

    for it in 0..opts.max_iter {
        let residual_norm = problem.residual(&x).norm();
        if residual_norm <= stop {
            return Ok((x, SolveStatus::Converged, it, trace));
        }
        let g = problem.gradient(&x);
        let h = problem.hessian(&x);
        let d = match newton_direction(&h, &g, opts.initial_damping) {
            Some(d) => d,
            None => g.clone(),
        };
        let slope = g.dot(&d);

        let t_boundary = problem.step_to_boundary(&x, &d);
        let mut t = 1.0f64;
        let truncated = opts.fraction_to_boundary * t_boundary < 1.0;
        if truncated {
            t = opts.fraction_to_boundary * t_boundary;
        }

        // Armijo backtracking; the slack term absorbs rounding once the
        // predicted increase is at the level of f itself
        let slack = 1e-14 * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &d * t;
            let f_trial = problem.objective(&trial);
            if f_trial.is_finite() && f_trial >= f + opts.armijo * t * slope - slack {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= opts.backtrack;
        }
        let Some((x_new, f_new)) = accepted else {
            let margin = problem.min_margin(&x);
            let status = if margin < BOUNDARY_MARGIN {
                SolveStatus::Boundary
            } else {
                SolveStatus::MaxIter
            };
            return Ok((x, status, it, trace));
        };
        x = x_new;
        f = f_new;
        history.push(f);
        truncations = if truncated { truncations + 1 } else { 0 };
        let margin = problem.min_margin(&x);
        trace.push(IterationRecord {
            iteration: it + 1,
            objective: f,
            step: t,
            residual_norm,
            min_margin: margin,
            truncated,
        });

        let increasing = history.len() > UNBOUNDED_WINDOW
            && history[history.len() - UNBOUNDED_WINDOW - 1..]
                .windows(2)
                .all(|w| w[1] > w[0]);
        if x.norm() > norm_cap && increasing && g.norm() > opts.tol {
            return Ok((x, SolveStatus::Unbounded, it + 1, trace));
        }
        if truncations >= BOUNDARY_TRUNCATIONS && margin < BOUNDARY_MARGIN {
            let residual_norm = problem.residual(&x).norm();
            if residual_norm > stop {
                return Ok((x, SolveStatus::Boundary, it + 1, trace));
            }
        }
    }
    let status = if problem.residual(&x).norm() <= stop {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIter
    };
    Ok((x, status, opts.max_iter, trace))
}

#[cfg(test)]
mod tests;
