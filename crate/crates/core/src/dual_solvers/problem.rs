//! Discretized dual objective, its derivatives and the stationarity residual.
//!
//! The dual variable is a vector `x` in one of two parametrizations:
//!
//! * Toeplitz: `x = q`, the coefficients of `Q(θ) = q₀ + Σ q_k cos kθ`;
//!   the moment target is the covariance window `r`.
//! * General: `x` lists the upper triangle of a symmetric `Λ` and
//!   `Q(θ) = G*(θ) Λ G(θ)`; the target is `tr{E_a Σ}` per basis matrix `E_a`.
//!
//! Both reduce to `Q = Bx` and `tr{ΛΣ} = sᵀx` for a basis matrix `B`
//! (one row per grid node) and target vector `s`.

use nalgebra::{DMatrix, DVector};

use crate::divergences::Divergence;
use crate::error::{Error, Result};
use crate::moments::{toeplitz, CovarianceWindow, StateCovariance};
use crate::spectral_core::{SpectralSamples, TransferSamples};

use super::{Barrier, RegularizationConfig, SignConvention};

/// Moment data and the parametrization it implies.
#[derive(Debug, Clone)]
pub enum MomentConstraint {
    /// Covariance window; shift-pair structure, dual variable `q`.
    Covariances(CovarianceWindow),
    /// Explicit `Σ` for an arbitrary filter; dual variable `Λ`.
    State {
        sigma: StateCovariance,
        transfer: TransferSamples,
    },
}

impl MomentConstraint {
    pub fn state(sigma: StateCovariance, transfer: TransferSamples) -> Result<Self> {
        if sigma.dim() != transfer.dim() {
            return Err(Error::Dimension(format!(
                "Σ is {0}x{0} but the filter has state dimension {1}",
                sigma.dim(),
                transfer.dim()
            )));
        }
        Ok(Self::State { sigma, transfer })
    }

    /// `T(r)` or `Σ`.
    pub fn sigma(&self) -> StateCovariance {
        match self {
            Self::Covariances(r) => toeplitz(r),
            Self::State { sigma, .. } => sigma.clone(),
        }
    }

    /// Side of the square matrices involved (`n + 1` or `m`).
    pub fn dim(&self) -> usize {
        match self {
            Self::Covariances(r) => r.degree() + 1,
            Self::State { sigma, .. } => sigma.dim(),
        }
    }

    /// Number of free dual parameters.
    pub fn num_params(&self) -> usize {
        match self {
            Self::Covariances(r) => r.degree() + 1,
            Self::State { sigma, .. } => sigma.dim() * (sigma.dim() + 1) / 2,
        }
    }

    pub fn is_toeplitz(&self) -> bool {
        matches!(self, Self::Covariances(_))
    }
}

/// Upper-triangle index pairs in parameter order.
pub(crate) fn sym_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
}

/// Symmetric basis matrix `E_a` for pair `(i, j)`.
fn basis_matrix(m: usize, (i, j): (usize, usize)) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(m, m);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// Packs a symmetric matrix into the general-mode parameter vector.
pub fn lambda_to_params(lambda: &DMatrix<f64>) -> DVector<f64> {
    let pairs = sym_pairs(lambda.nrows());
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| lambda[(i, j)]))
}

/// Inverse of [`lambda_to_params`].
pub fn params_to_lambda(x: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let mut lambda = DMatrix::zeros(m, m);
    for (a, (i, j)) in sym_pairs(m).into_iter().enumerate() {
        lambda[(i, j)] = x[a];
        lambda[(j, i)] = x[a];
    }
    lambda
}

/// Rows `Re(G_j* E_a G_j)` for every node `j` and basis matrix `E_a`.
pub(crate) fn state_basis(transfer: &TransferSamples) -> DMatrix<f64> {
    let pairs = sym_pairs(transfer.dim());
    let n_nodes = transfer.grid().len();
    let mut basis = DMatrix::zeros(n_nodes, pairs.len());
    for j in 0..n_nodes {
        let g = transfer.node(j);
        for (a, &(r, c)) in pairs.iter().enumerate() {
            let v = (g[r].conj() * g[c]).re;
            basis[(j, a)] = if r == c { v } else { 2.0 * v };
        }
    }
    basis
}

/// `tr{E_a S}` for every basis matrix, i.e. the upper triangle with doubled
/// off-diagonal entries.
pub(crate) fn pack_doubled(s: &DMatrix<f64>) -> DVector<f64> {
    let pairs = sym_pairs(s.nrows());
    DVector::from_iterator(
        pairs.len(),
        pairs
            .iter()
            .map(|&(r, c)| if r == c { s[(r, c)] } else { 2.0 * s[(r, c)] }),
    )
}

/// The concave dual objective of one problem instance.
#[derive(Debug)]
pub struct DualProblem<'a> {
    divergence: &'a dyn Divergence,
    prior: &'a SpectralSamples,
    constraint: &'a MomentConstraint,
    regularization: RegularizationConfig,
    sign: f64,
    basis: DMatrix<f64>,
    target: DVector<f64>,
    /// `K` with `tr{ΛW⁻¹Λ} = xᵀKx`.
    penalty: Option<DMatrix<f64>>,
    weight_inv: Option<DMatrix<f64>>,
    sigma: StateCovariance,
    weight: f64,
}

impl<'a> DualProblem<'a> {
    pub fn new(
        divergence: &'a dyn Divergence,
        prior: &'a SpectralSamples,
        constraint: &'a MomentConstraint,
        regularization: &RegularizationConfig,
        convention: SignConvention,
    ) -> Result<Self> {
        if !prior.is_positive() {
            return Err(Error::NonPositivePrior(prior.min()));
        }
        regularization.validate()?;
        let grid = prior.grid();
        let n_nodes = grid.len();
        let (basis, target) = match constraint {
            MomentConstraint::Covariances(r) => {
                let n = r.degree();
                if n >= n_nodes / 2 {
                    return Err(Error::OrderTooLarge {
                        order: n,
                        grid: n_nodes,
                        limit: n_nodes / 2,
                    });
                }
                let basis = DMatrix::from_fn(n_nodes, n + 1, |j, k| (k as f64 * grid.angle(j)).cos());
                (basis, DVector::from_column_slice(r.lags()))
            }
            MomentConstraint::State { sigma, transfer } => {
                grid.check_same(transfer.grid())?;
                (state_basis(transfer), pack_doubled(sigma.matrix()))
            }
        };

        let (penalty, weight_inv) = match regularization {
            RegularizationConfig::Primal { weight } => {
                let dim = constraint.dim();
                if weight.nrows() != dim || weight.ncols() != dim {
                    return Err(Error::InvalidRegularization(format!(
                        "weight must be {dim}x{dim}, got {}x{}",
                        weight.nrows(),
                        weight.ncols()
                    )));
                }
                let w_inv = weight
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::InvalidRegularization("weight is not positive definite".into()))?
                    .inverse();
                let k = match constraint {
                    MomentConstraint::Covariances(_) => w_inv.clone(),
                    MomentConstraint::State { .. } => {
                        let pairs = sym_pairs(dim);
                        let mats: Vec<_> = pairs.iter().map(|&p| basis_matrix(dim, p)).collect();
                        DMatrix::from_fn(pairs.len(), pairs.len(), |a, b| {
                            (&mats[a] * &w_inv * &mats[b]).trace()
                        })
                    }
                };
                (Some(k), Some(w_inv))
            }
            _ => (None, None),
        };

        Ok(Self {
            divergence,
            prior,
            constraint,
            regularization: regularization.clone(),
            sign: convention.sign(),
            basis,
            target,
            penalty,
            weight_inv,
            sigma: constraint.sigma(),
            weight: grid.weight(),
        })
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn divergence(&self) -> &dyn Divergence {
        self.divergence
    }

    pub fn prior(&self) -> &SpectralSamples {
        self.prior
    }

    pub fn constraint(&self) -> &MomentConstraint {
        self.constraint
    }

    pub fn regularization(&self) -> &RegularizationConfig {
        &self.regularization
    }

    pub fn sigma(&self) -> &StateCovariance {
        &self.sigma
    }

    pub fn convention(&self) -> SignConvention {
        if self.sign > 0.0 {
            SignConvention::Standard
        } else {
            SignConvention::Reversed
        }
    }

    /// Parameters in the standard convention.
    fn standard(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.sign
    }

    /// `Q(θ_j)` in the standard convention, where the divergence domain and
    /// the barrier are defined.
    pub fn q_values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.standard(x)
    }

    fn barrier(&self) -> Option<(f64, Barrier)> {
        match self.regularization {
            RegularizationConfig::Dual { lambda, barrier } => Some((lambda, barrier)),
            _ => None,
        }
    }

    /// Smallest nodewise margin over the divergence and barrier domains.
    pub fn min_margin(&self, x: &DVector<f64>) -> f64 {
        self.min_margin_q(&self.q_values(x))
    }

    fn min_margin_q(&self, q: &DVector<f64>) -> f64 {
        let psi = self.prior.values();
        let barrier = self.barrier();
        q.iter()
            .zip(psi)
            .map(|(&qj, &pj)| {
                let m = self.divergence.margin(qj, pj);
                match barrier {
                    Some((_, b)) => m.min(b.margin(qj)),
                    None => m,
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.min_margin(x) > 0.0
    }

    /// Largest step `t` keeping every margin positive along `x + t·d`.
    pub(crate) fn step_to_boundary(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let q = self.q_values(x);
        let dq = self.q_values(d);
        let psi = self.prior.values();
        let barrier = self.barrier();
        let mut t_max = f64::INFINITY;
        let mut visit = |m0: f64, m1: f64| {
            let slope = m1 - m0;
            if slope < 0.0 {
                t_max = t_max.min(-m0 / slope);
            }
        };
        for j in 0..q.len() {
            let (qj, dj, pj) = (q[j], dq[j], psi[j]);
            // margins are affine in q
            visit(self.divergence.margin(qj, pj), self.divergence.margin(qj + dj, pj));
            if let Some((_, b)) = barrier {
                visit(b.margin(qj), b.margin(qj + dj));
            }
        }
        t_max
    }

    /// Dual objective without the divergence's dropped constants;
    /// `−∞` outside the domain.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let xs = self.standard(x);
        let q = &self.basis * &xs;
        if self.min_margin_q(&q) <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let psi = self.prior.values();
        let mut integral = 0.0;
        for (&qj, &pj) in q.iter().zip(psi) {
            integral += self.divergence.dual_integrand(qj, pj);
        }
        let mut value = -self.target.dot(&xs) + integral * self.weight;
        if let Some(k) = &self.penalty {
            value -= 0.25 * (xs.transpose() * k * &xs)[(0, 0)];
        }
        if let Some((lambda, b)) = self.barrier() {
            let bq: f64 = q.iter().map(|&qj| b.integrand(qj)).sum::<f64>() * self.weight;
            value += lambda * (b.offset() + bq);
        }
        value
    }

    /// `∫ c(ψ)`, the part of the dual value that does not depend on `Q`.
    pub fn objective_constant(&self) -> f64 {
        self.prior
            .values()
            .iter()
            .map(|&p| self.divergence.dual_constant(p))
            .sum::<f64>()
            * self.weight
    }

    /// Full dual value, comparable with primal objective values.
    pub fn objective_with_constants(&self, x: &DVector<f64>) -> f64 {
        self.objective(x) + self.objective_constant()
    }

    /// Gradient of [`Self::objective`] in the caller's convention.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs = self.standard(x);
        let q = &self.basis * &xs;
        let psi = self.prior.values();
        let barrier = self.barrier();
        let nodal = DVector::from_iterator(
            q.len(),
            q.iter().zip(psi).map(|(&qj, &pj)| {
                let mut v = self.divergence.spectrum(qj, pj);
                if let Some((lambda, b)) = barrier {
                    v += lambda * b.derivative(qj);
                }
                v * self.weight
            }),
        );
        let mut g = self.basis.tr_mul(&nodal) - &self.target;
        if let Some(k) = &self.penalty {
            g -= k * &xs * 0.5;
        }
        g * self.sign
    }

    /// Hessian of [`Self::objective`]; identical in both conventions.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let q = self.q_values(x);
        let psi = self.prior.values();
        let barrier = self.barrier();
        let mut scaled = self.basis.clone();
        for j in 0..q.len() {
            let (qj, pj) = (q[j], psi[j]);
            let mut c = self.divergence.spectrum_derivative(qj, pj);
            if let Some((lambda, b)) = barrier {
                c += lambda * b.second_derivative(qj);
            }
            scaled.row_mut(j).scale_mut(c * self.weight);
        }
        let mut h = self.basis.tr_mul(&scaled);
        if let Some(k) = &self.penalty {
            h -= k * 0.5;
        }
        h
    }

    /// Fitted spectrum `F(Q; Ψ)`.
    pub fn spectrum(&self, x: &DVector<f64>) -> SpectralSamples {
        let q = self.q_values(x);
        let values = q
            .iter()
            .zip(self.prior.values())
            .map(|(&qj, &pj)| self.divergence.spectrum(qj, pj))
            .collect();
        SpectralSamples::new(self.prior.grid(), values)
            .unwrap_or_else(|_| SpectralSamples::constant(self.prior.grid(), f64::NAN))
    }

    /// `(1/N) Σ_j w_j Re(G_j G_j*)`, or `T` of the weighted lags in Toeplitz mode.
    fn moment_matrix(&self, w: &[f64]) -> DMatrix<f64> {
        match self.constraint {
            MomentConstraint::Covariances(r) => {
                let lags = self.moment_lags(w, r.degree());
                let m = lags.len();
                DMatrix::from_fn(m, m, |i, j| lags[i.abs_diff(j)])
            }
            MomentConstraint::State { transfer, .. } => {
                let m = transfer.dim();
                let mut acc = DMatrix::zeros(m, m);
                for (j, &wj) in w.iter().enumerate() {
                    let g = transfer.node(j);
                    for r in 0..m {
                        for c in r..m {
                            acc[(r, c)] += wj * (g[r] * g[c].conj()).re;
                        }
                    }
                }
                acc.fill_lower_triangle_with_upper_triangle();
                acc * self.weight
            }
        }
    }

    fn moment_lags(&self, w: &[f64], n: usize) -> Vec<f64> {
        (0..=n)
            .map(|k| self.basis.column(k).iter().zip(w).map(|(b, v)| b * v).sum::<f64>() * self.weight)
            .collect()
    }

    /// `∫ G F(Q; Ψ) G*`.
    pub fn matched_moments(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.moment_matrix(self.spectrum(x).values())
    }

    /// Multiplier matrix in the caller's convention. In Toeplitz mode this is
    /// the representative with `Λ₀₀ = q₀` and `Λ₀ₖ = Λₖ₀ = q_k/2`.
    pub fn lambda(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.constraint.dim();
        match self.constraint {
            MomentConstraint::Covariances(_) => {
                let mut lambda = DMatrix::zeros(m, m);
                lambda[(0, 0)] = x[0];
                for k in 1..m {
                    lambda[(0, k)] = 0.5 * x[k];
                    lambda[(k, 0)] = 0.5 * x[k];
                }
                lambda
            }
            MomentConstraint::State { .. } => params_to_lambda(x, m),
        }
    }

    /// Matching deviation `Δ̂ = −½W⁻¹Λ` with `Λ` in the opposite-sign
    /// convention; an `(n+1)×1` lag vector in Toeplitz mode, `m×m` otherwise.
    pub fn deviation(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let w_inv = self.weight_inv.as_ref()?;
        let xs = self.standard(x);
        Some(match self.constraint {
            MomentConstraint::Covariances(_) => {
                let v = w_inv * &xs * 0.5;
                DMatrix::from_column_slice(v.len(), 1, v.as_slice())
            }
            MomentConstraint::State { .. } => {
                let lambda = params_to_lambda(&xs, self.constraint.dim());
                w_inv * lambda * 0.5
            }
        })
    }

    /// Right-hand side of the stationarity condition
    /// `Σ − ∫GFG* = RHS` for the configured regime.
    pub fn stationarity_rhs(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.constraint.dim();
        match &self.regularization {
            RegularizationConfig::None => DMatrix::zeros(m, m),
            RegularizationConfig::Primal { .. } => {
                let dev = self.deviation(x).expect("primal regime has a weight");
                match self.constraint {
                    MomentConstraint::Covariances(_) => {
                        DMatrix::from_fn(m, m, |i, j| -dev[(i.abs_diff(j), 0)])
                    }
                    MomentConstraint::State { .. } => -(&dev + dev.transpose()) * 0.5,
                }
            }
            RegularizationConfig::Dual { lambda, barrier } => {
                let q = self.q_values(x);
                let w: Vec<f64> = q.iter().map(|&qj| barrier.derivative(qj)).collect();
                self.moment_matrix(&w) * *lambda
            }
        }
    }

    /// `Σ − ∫GFG* − RHS`; zero exactly at a stationary point.
    pub fn residual(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.sigma.matrix() - self.matched_moments(x) - self.stationarity_rhs(x)
    }

    /// Starting point along the ray `Λ = κI` (Toeplitz: `Q ≡ κ`), with `κ`
    /// maximizing the objective on that ray when the maximizer is interior.
    pub fn initial_point(&self) -> Result<DVector<f64>> {
        let p = self.dim();
        let mut dir = DVector::zeros(p);
        match self.constraint {
            MomentConstraint::Covariances(_) => dir[0] = 1.0,
            MomentConstraint::State { .. } => {
                for (a, (i, j)) in sym_pairs(self.constraint.dim()).into_iter().enumerate() {
                    if i == j {
                        dir[a] = 1.0;
                    }
                }
            }
        }
        // work in standard coordinates, convert at the end
        let at = |kappa: f64| &dir * (kappa * self.sign);
        let (lo, hi) = self.feasible_interval(&(&self.basis * &dir))?;
        let slope = |kappa: f64| self.gradient(&at(kappa)).dot(&dir) * self.sign;

        let (mut a, mut b) = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (lo, hi),
            (true, false) => (lo, f64::INFINITY),
            (false, true) => (f64::NEG_INFINITY, hi),
            (false, false) => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let mut probe = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a + a.abs().max(1.0),
            (false, true) => b - b.abs().max(1.0),
            (false, false) => 0.0,
        };
        let first_probe = probe;
        // expand unbounded sides until the slope changes sign
        for _ in 0..64 {
            let s = slope(probe);
            if !s.is_finite() {
                break;
            }
            if s > 0.0 {
                a = probe;
                if b.is_finite() {
                    break;
                }
                probe = probe + probe.abs().max(1.0);
            } else {
                b = probe;
                if a.is_finite() {
                    break;
                }
                probe = probe - probe.abs().max(1.0);
            }
        }
        let kappa = if a.is_finite() && b.is_finite() {
            let (mut left, mut right) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (left + right);
                if mid <= left || mid >= right {
                    break;
                }
                if slope(mid) > 0.0 {
                    left = mid;
                } else {
                    right = mid;
                }
            }
            let mid = 0.5 * (left + right);
            // keep a strict interior start when the ray maximum is on the boundary
            let lo_gap = if lo.is_finite() { mid - lo } else { f64::INFINITY };
            let hi_gap = if hi.is_finite() { hi - mid } else { f64::INFINITY };
            let span = (b - a).abs().max(1e-12);
            if lo_gap < 1e-3 * span {
                lo + 1e-3 * span
            } else if hi_gap < 1e-3 * span {
                hi - 1e-3 * span
            } else {
                mid
            }
        } else {
            // ray maximum at infinity; any interior point will do
            first_probe
        };
        let x0 = at(kappa);
        if !self.is_feasible(&x0) {
            return Err(Error::NoInteriorStart(format!(
                "ray start κ = {kappa} is outside the dual domain"
            )));
        }
        Ok(x0)
    }

    fn feasible_interval(&self, qdir: &DVector<f64>) -> Result<(f64, f64)> {
        let psi = self.prior.values();
        let barrier = self.barrier();
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut update = |m0: f64, m1: f64| -> Result<()> {
            let slope = m1 - m0;
            if slope > 0.0 {
                lo = lo.max(-m0 / slope);
            } else if slope < 0.0 {
                hi = hi.min(-m0 / slope);
            } else if m0 <= 0.0 {
                return Err(Error::NoInteriorStart("margin identically nonpositive".into()));
            }
            Ok(())
        };
        for (&e, &pj) in qdir.iter().zip(psi) {
            update(self.divergence.margin(0.0, pj), self.divergence.margin(e, pj))?;
            if let Some((_, b)) = barrier {
                update(b.margin(0.0), b.margin(e))?;
            }
        }
        if lo >= hi {
            return Err(Error::NoInteriorStart("empty feasible ray".into()));
        }
        Ok((lo, hi))
    }
}
