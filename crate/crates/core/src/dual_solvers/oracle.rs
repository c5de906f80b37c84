//! Direct minimization of the discretized primal problem, used to cross-check
//! the dual solvers on small instances.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::divergences::Divergence;
use crate::error::{Error, Result};
use crate::moments::StateCovariance;
use crate::spectral_core::{SpectralSamples, TransferSamples};

use super::problem::{lambda_to_params, pack_doubled, state_basis};
use super::RegularizationConfig;

const MAX_NODES: usize = 128;
const MAX_STATE_DIM: usize = 4;
const VIOLATION_TOL: f64 = 1e-6;
/// Target and acceptance levels for the projected-gradient stationarity
/// measure (scaled by `1 + ‖Φ‖_∞`).
const STATIONARITY_TARGET: f64 = 1e-11;
const STATIONARITY_ACCEPT: f64 = 1e-7;

/// Result of [`brute_force_primal`].
#[derive(Debug, Clone)]
pub struct PrimalOracle {
    pub phi: SpectralSamples,
    /// Discretized `D(Φ‖Ψ)` plus `tr{ΔWΔ}` under primal regularization.
    pub objective: f64,
    /// `‖∫GΦG* − Σ‖_F`.
    pub violation: f64,
    pub iterations: usize,
}

impl PrimalOracle {
    /// Nodes where `Φ` sits on the nonnegativity constraint.
    pub fn active_set(&self, tol: f64) -> Vec<usize> {
        self.phi
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= tol)
            .map(|(j, _)| j)
            .collect()
    }
}

struct Instance<'a> {
    div: &'a dyn Divergence,
    psi: &'a [f64],
    basis: DMatrix<f64>,
    target: DVector<f64>,
    sigma: DMatrix<f64>,
    weight: f64,
    dim: usize,
}

impl Instance<'_> {
    fn moments(&self, phi: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim;
        let mut acc = DMatrix::zeros(m, m);
        let lags = self.basis.tr_mul(phi) * self.weight;
        for (a, (i, j)) in super::problem::sym_pairs(m).into_iter().enumerate() {
            let v = if i == j { lags[a] } else { 0.5 * lags[a] };
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
        acc
    }

    /// Constraint vector `tr{E_a(∫GΦG* − Σ)}`.
    fn constraint(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(phi) * self.weight - &self.target
    }

    fn distance(&self, phi: &DVector<f64>) -> f64 {
        phi.iter()
            .zip(self.psi)
            .map(|(&p, &s)| self.div.distance(p, s))
            .sum::<f64>()
            * self.weight
    }

    fn distance_gradient(&self, phi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            phi.len(),
            phi.iter()
                .zip(self.psi)
                .map(|(&p, &s)| self.div.distance_derivative(p, s)),
        )
    }
}

/// Discretized primal objective `D(Φ‖Ψ)` (plus `tr{ΔWΔ}` with
/// `Δ = ∫GΦG* − Σ` under primal regularization) at an arbitrary `Φ`.
pub fn primal_objective(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    target: &StateCovariance,
    transfer: &TransferSamples,
    reg: &RegularizationConfig,
    phi: &SpectralSamples,
) -> Result<f64> {
    let inst = instance(div, prior, target, transfer)?;
    prior.grid().check_same(phi.grid())?;
    let phi = DVector::from_column_slice(phi.values());
    let mut value = inst.distance(&phi);
    if let RegularizationConfig::Primal { weight } = reg {
        let delta = inst.moments(&phi) - &inst.sigma;
        value += (&delta * weight * &delta).trace();
    }
    Ok(value)
}

fn instance<'a>(
    div: &'a dyn Divergence,
    prior: &'a SpectralSamples,
    target: &StateCovariance,
    transfer: &TransferSamples,
) -> Result<Instance<'a>> {
    let grid = prior.grid();
    grid.check_same(transfer.grid())?;
    if !prior.is_positive() {
        return Err(Error::NonPositivePrior(prior.min()));
    }
    if target.dim() != transfer.dim() {
        return Err(Error::Dimension(format!(
            "Σ is {0}x{0} but the filter has state dimension {1}",
            target.dim(),
            transfer.dim()
        )));
    }
    Ok(Instance {
        div,
        psi: prior.values(),
        basis: state_basis(transfer),
        target: pack_doubled(target.matrix()),
        sigma: target.matrix().clone(),
        weight: grid.weight(),
        dim: target.dim(),
    })
}

/// Minimizes the discretized primal over `Φ ≥ 0` by spectral projected
/// gradient, with an augmented Lagrangian for the moment constraints when
/// `reg` is `None`. Works on `N ≤ 128`, `m ≤ 4`.
pub fn brute_force_primal(
    div: &dyn Divergence,
    prior: &SpectralSamples,
    target: &StateCovariance,
    transfer: &TransferSamples,
    reg: &RegularizationConfig,
) -> Result<PrimalOracle> {
    let n_nodes = prior.grid().len();
    if n_nodes > MAX_NODES || target.dim() > MAX_STATE_DIM {
        return Err(Error::InvalidOptions(format!(
            "oracle is limited to N ≤ {MAX_NODES} and m ≤ {MAX_STATE_DIM}"
        )));
    }
    reg.validate()?;
    let inst = instance(div, prior, target, transfer)?;
    let start = DVector::from_column_slice(prior.values());

    let (phi, iterations) = match reg {
        RegularizationConfig::None => augmented_lagrangian(&inst, start)?,
        RegularizationConfig::Primal { weight } => {
            if weight.nrows() != inst.dim || weight.ncols() != inst.dim {
                return Err(Error::InvalidRegularization(format!(
                    "weight must be {0}x{0}",
                    inst.dim
                )));
            }
            penalized(&inst, weight, start)?
        }
        RegularizationConfig::Dual { .. } => {
            return Err(Error::InvalidRegularization(
                "the barrier-regularized problem has no primal form".into(),
            ))
        }
    };

    let violation = (inst.moments(&phi) - &inst.sigma).norm();
    let samples = SpectralSamples::new(prior.grid(), phi.iter().copied().collect())?;
    let objective = primal_objective(div, prior, target, transfer, reg, &samples)?;
    if matches!(reg, RegularizationConfig::None) && violation > VIOLATION_TOL {
        return Err(Error::OracleNotConverged { violation });
    }
    Ok(PrimalOracle {
        phi: samples,
        objective,
        violation,
        iterations,
    })
}

fn penalized(
    inst: &Instance<'_>,
    weight: &DMatrix<f64>,
    start: DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    // objective scaled by N so the gradient is O(1) per node
    let n = 1.0 / inst.weight;
    let eval = |phi: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let d = inst.distance(phi);
        if !d.is_finite() {
            return None;
        }
        let delta = inst.moments(phi) - &inst.sigma;
        let f = n * (d + (&delta * weight * &delta).trace());
        let sym = weight * &delta + &delta * weight;
        let g = inst.distance_gradient(phi) + &inst.basis * lambda_to_params(&sym);
        Some((f, g))
    };
    let out = spg(eval, start, STATIONARITY_TARGET, 200_000);
    if !out.acceptable() {
        return Err(Error::OracleNotConverged {
            violation: out.projected_gradient,
        });
    }
    Ok((out.x, out.iterations))
}

fn augmented_lagrangian(inst: &Instance<'_>, start: DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let n = 1.0 / inst.weight;
    let scale = 1.0 + inst.target.amax();
    let mut y = DVector::zeros(inst.target.len());
    let mut rho = 10.0;
    let mut phi = start;
    let mut total = 0;
    let mut last_violation = f64::INFINITY;
    for _ in 0..60 {
        let eval = |p: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
            let d = inst.distance(p);
            if !d.is_finite() {
                return None;
            }
            let c = inst.constraint(p);
            let f = n * (d + y.dot(&c) + 0.5 * rho * c.norm_squared());
            let mult = &y + &c * rho;
            let g = inst.distance_gradient(p) + &inst.basis * mult;
            Some((f, g))
        };
        let out = spg(eval, phi, STATIONARITY_TARGET, 100_000);
        total += out.iterations;
        let settled = out.acceptable();
        phi = out.x;
        let c = inst.constraint(&phi);
        let violation = c.amax();
        if settled && violation <= 1e-11 * scale {
            return Ok((phi, total));
        }
        y += &c * rho;
        if violation > 0.25 * last_violation {
            rho = (rho * 10.0).min(1e8);
        }
        last_violation = violation;
    }
    Err(Error::OracleNotConverged {
        violation: (inst.moments(&phi) - &inst.sigma).norm(),
    })
}

struct SpgOutcome {
    x: DVector<f64>,
    iterations: usize,
    projected_gradient: f64,
}

impl SpgOutcome {
    /// The line search can stall at rounding level before the target.
    fn acceptable(&self) -> bool {
        self.projected_gradient <= STATIONARITY_ACCEPT * (1.0 + self.x.amax())
    }
}

fn project(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.max(0.0))
}

/// Nonmonotone spectral projected gradient on the nonnegative orthant.
/// `eval` returns `None` outside the objective's domain.
fn spg<E>(eval: E, start: DVector<f64>, eps: f64, max_iter: usize) -> SpgOutcome
where
    E: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    const MEMORY: usize = 10;
    const GAMMA: f64 = 1e-4;
    const ALPHA_MIN: f64 = 1e-30;
    const ALPHA_MAX: f64 = 1e30;

    let mut x = project(&start);
    let (mut f, mut g) = eval(&x).expect("oracle start must lie in the domain");
    let mut recent: VecDeque<f64> = VecDeque::from([f]);
    let pg = |x: &DVector<f64>, g: &DVector<f64>| (project(&(x - g)) - x).amax();
    let mut alpha = 1.0 / pg(&x, &g).max(1e-12);
    let mut it = 0;
    while it < max_iter {
        let stat = pg(&x, &g);
        if stat <= eps * (1.0 + x.amax()) {
            return SpgOutcome {
                x,
                iterations: it,
                projected_gradient: stat,
            };
        }
        it += 1;
        let d = project(&(&x - &g * alpha)) - &x;
        let slope = g.dot(&d);
        let f_ref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let trial = &x + &d * t;
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f_ref + GAMMA * t * slope {
                    next = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = next else {
            break;
        };
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        alpha = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(ALPHA_MIN, ALPHA_MAX)
        } else {
            ALPHA_MAX.min(1e3 * alpha)
        };
        x = x_new;
        f = f_new;
        g = g_new;
        recent.push_back(f);
        if recent.len() > MEMORY {
            recent.pop_front();
        }
    }
    let stat = pg(&x, &g);
    SpgOutcome {
        x,
        iterations: it,
        projected_gradient: stat,
    }
}
