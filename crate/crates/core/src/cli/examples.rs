//! The two worked examples as PASS/FAIL assertion lists.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{diag, shift_pair_constraint};
use crate::divergences::{kullback_leibler, quadratic, Divergence};
use crate::dual_solvers::{
    solve, solve_dual_regularized, solve_exact, Barrier, MomentConstraint, RegularizationConfig,
    SolveStatus, SolverOptions,
};
use crate::moments::CovarianceWindow;
use crate::spectral_core::{fourier_coeffs, make_grid, SpectralSamples};

pub const ALPHAS: [f64; 3] = [1e-3, 1e-1, 10.0];
pub const LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];
const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ExampleSettings {
    pub grid: usize,
    pub seed: u64,
    pub opts: SolverOptions,
}

impl Default for ExampleSettings {
    fn default() -> Self {
        Self {
            grid: 256,
            seed: 1,
            opts: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// `F(Q; Ψ)` evaluated with the original prior.
fn spectrum_for(div: &dyn Divergence, q: &SpectralSamples, psi: &SpectralSamples) -> SpectralSamples {
    let values = q
        .values()
        .iter()
        .zip(psi.values())
        .map(|(&qj, &pj)| div.spectrum(qj, pj))
        .collect();
    SpectralSamples::new(psi.grid(), values).expect("finite spectrum")
}

/// Random smooth prior and a feasible window generated from `F(Q_true; Ψ)`.
fn feasible_instance(
    div: &dyn Divergence,
    settings: &ExampleSettings,
    n: usize,
) -> crate::Result<(SpectralSamples, CovarianceWindow)> {
    let grid = make_grid(settings.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let p1: f64 = rng.random_range(-0.4..0.4);
    let psi = SpectralSamples::from_fn(&grid, |t| 1.0 + p1 * t.cos());
    // Q_true ≡ q₀ + small harmonics stays inside every domain used here
    let mut coeffs = vec![0.5];
    for _ in 0..n {
        coeffs.push(rng.random_range(-0.15..0.15));
    }
    let q_true = SpectralSamples::from_fn(&grid, |t| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (k as f64 * t).cos())
            .sum()
    });
    let phi = spectrum_for(div, &q_true, &psi);
    Ok((psi, fourier_coeffs(&phi, n)?))
}

pub fn example1_checks(settings: &ExampleSettings) -> crate::Result<Vec<Check>> {
    let div = quadratic();
    let mut checks = Vec::new();
    let (psi, r) = feasible_instance(&div, settings, 2)?;
    let n = r.degree();
    let constraint = MomentConstraint::Covariances(r.clone());
    for alpha in ALPHAS {
        let reg = RegularizationConfig::two_sided_lag_weight(2.0 * alpha, n);
        let regularized = solve(&div, &psi, &constraint, &reg, &settings.opts)?;
        let c = 1.0 / (4.0 * alpha);
        let shifted_prior = psi.map(|v| v + c);
        let mut lags = r.lags().to_vec();
        lags[0] += c;
        let shifted = MomentConstraint::Covariances(CovarianceWindow::new(lags)?);
        let exact = solve_exact(&div, &shifted_prior, &shifted, &settings.opts)?;
        let a = spectrum_for(&div, &regularized.q, &psi);
        let b = spectrum_for(&div, &exact.q, &psi);
        let gap = a.sup_distance(&b)?;
        let ok = regularized.converged() && exact.converged() && gap <= IDENTITY_TOL;
        checks.push(Check::new(
            format!("prior-shift identity alpha={alpha}"),
            ok,
            format!(
                "sup |Phi_reg - Phi_shift| = {gap:.3e} (statuses {} / {})",
                regularized.status, exact.status
            ),
        ));
    }

    let grid = make_grid(settings.grid)?;
    let big = SpectralSamples::constant(&grid, 1000.0);
    let infeasible = MomentConstraint::Covariances(CovarianceWindow::new(vec![1000.0, 900.0, 800.0])?);
    for alpha in ALPHAS {
        let reg = RegularizationConfig::two_sided_lag_weight(2.0 * alpha, 2);
        let sol = solve(&div, &big, &infeasible, &reg, &settings.opts)?;
        checks.push(Check::new(
            format!("infeasible window alpha={alpha}"),
            sol.status == SolveStatus::Boundary,
            format!("status {} after {} iterations", sol.status, sol.iterations),
        ));
    }
    Ok(checks)
}

pub fn example2_checks(settings: &ExampleSettings) -> crate::Result<Vec<Check>> {
    let div = kullback_leibler();
    let mut checks = Vec::new();
    let (psi, r) = feasible_instance(&div, settings, 2)?;
    let constraint = MomentConstraint::Covariances(r);
    for lambda in LAMBDAS {
        let barrier = solve_dual_regularized(&div, &psi, &constraint, lambda, Barrier::Log, &settings.opts)?;
        let shifted_prior = psi.map(|v| v + lambda);
        let exact = solve_exact(&div, &shifted_prior, &constraint, &settings.opts)?;
        let a = spectrum_for(&div, &barrier.q, &psi);
        let b = spectrum_for(&div, &exact.q, &psi);
        let gap = a.sup_distance(&b)?;
        checks.push(Check::new(
            format!("log-barrier prior shift lambda={lambda}"),
            barrier.converged() && exact.converged() && gap <= IDENTITY_TOL,
            format!(
                "sup |Phi_barrier - Phi_shift| = {gap:.3e} (statuses {} / {})",
                barrier.status, exact.status
            ),
        ));
    }

    let grid = make_grid(settings.grid)?;
    let flat = SpectralSamples::constant(&grid, 1.0);
    let indefinite = shift_pair_constraint(diag(&[1.0, -0.2]), &grid)?;
    for lambda in LAMBDAS {
        let sol = solve_dual_regularized(&div, &flat, &indefinite, lambda, Barrier::B1, &settings.opts)?;
        checks.push(Check::new(
            format!("indefinite sigma lambda={lambda}"),
            sol.status == SolveStatus::Unbounded && sol.iterations <= settings.opts.max_iter,
            format!("status {} after {} iterations", sol.status, sol.iterations),
        ));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_checks_pass() {
        let settings = ExampleSettings::default();
        for c in example1_checks(&settings).unwrap() {
            assert!(c.pass, "{}", c.line());
        }
        for c in example2_checks(&settings).unwrap() {
            assert!(c.pass, "{}", c.line());
        }
    }
}
