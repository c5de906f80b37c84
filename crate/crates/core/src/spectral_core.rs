//! Frequency-domain substrate.
//!
//! Spectra are stored as samples on a uniform grid of the unit circle and
//! every integral `(1/2π)∫ f(e^{iθ}) dθ` is evaluated as the grid mean. The
//! grid is offset by half a cell so that nodes come in `±θ` pairs and no node
//! sits on `θ = π`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::moments::CovarianceWindow;

/// Smallest grid accepted by [`FrequencyGrid::new`].
pub const MIN_GRID_SIZE: usize = 16;

/// Grid size used for estimation runs unless overridden.
pub const DEFAULT_GRID_SIZE: usize = 2048;

/// Uniform sampling of `(−π, π]` with equal quadrature weights `1/N`.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    angles: Arc<[f64]>,
}

impl FrequencyGrid {
    /// Nodes `θ_j = −π + 2π(j + ½)/N` for `j = 0..N`.
    pub fn new(size: usize) -> Result<Self> {
        if size < MIN_GRID_SIZE || size % 2 != 0 {
            return Err(Error::InvalidGridSize {
                got: size,
                min: MIN_GRID_SIZE,
            });
        }
        let n = size as f64;
        let angles = (0..size)
            .map(|j| -PI + 2.0 * PI * (j as f64 + 0.5) / n)
            .collect::<Vec<_>>();
        Ok(Self {
            angles: angles.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle(&self, j: usize) -> f64 {
        self.angles[j]
    }

    /// Quadrature weight of every node.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Index of the node at `−θ_j`.
    pub fn mirror(&self, j: usize) -> usize {
        self.len() - 1 - j
    }

    /// Grid mean of `f(θ_j)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.angles.iter().map(|&t| f(t)).sum::<f64>() * self.weight()
    }

    pub fn check_same(&self, other: &FrequencyGrid) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len()
    }
}

/// Convenience constructor mirroring [`FrequencyGrid::new`].
pub fn make_grid(size: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(size)
}

/// A real function sampled on a [`FrequencyGrid`].
///
/// Used for spectra (prior, fitted) but also for pseudo-polynomials, which
/// may be negative; nonnegativity is a query, not an invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSamples {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl SpectralSamples {
    pub fn new(grid: &FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                left: grid.len(),
                right: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("spectral sample {v}")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn constant(grid: &FrequencyGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &FrequencyGrid, f: F) -> Self {
        Self {
            grid: grid.clone(),
            values: grid.angles().iter().map(|&t| f(t)).collect(),
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// `⟨Φ, 1⟩`, the zeroth covariance of the spectrum.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.weight()
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest nodewise absolute difference.
    pub fn sup_distance(&self, other: &SpectralSamples) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// `⟨a, b⟩ = (1/N) Σ_j a_j b_j`.
pub fn inner_product(a: &SpectralSamples, b: &SpectralSamples) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() * a.grid.weight())
}

/// `Q(e^{iθ}) = q₀ + Σ_k q_k cos kθ`, i.e. the symmetric form with
/// `½(z^k + z^{−k})` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPolynomial {
    coeffs: Vec<f64>,
}

impl PseudoPolynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Dimension("pseudo-polynomial needs q₀".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("pseudo-polynomial coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, q)| q * (k as f64 * theta).cos())
            .sum()
    }
}

pub fn eval_pseudopoly(q: &PseudoPolynomial, grid: &FrequencyGrid) -> SpectralSamples {
    SpectralSamples::from_fn(grid, |t| q.eval(t))
}

/// `r_k = (1/N) Σ_j Φ_j cos kθ_j` for `k = 0..=n`.
pub fn fourier_coeffs(phi: &SpectralSamples, n: usize) -> Result<CovarianceWindow> {
    let grid = phi.grid();
    let limit = grid.len() / 2;
    if n >= limit {
        return Err(Error::OrderTooLarge {
            order: n,
            grid: grid.len(),
            limit,
        });
    }
    let w = grid.weight();
    let lags = (0..=n)
        .map(|k| {
            let k = k as f64;
            phi.values()
                .iter()
                .zip(grid.angles())
                .map(|(v, t)| v * (k * t).cos())
                .sum::<f64>()
                * w
        })
        .collect();
    CovarianceWindow::new(lags)
}

/// Real pair `(A, B)` defining the input-to-state filter `G(z) = (I − zA)⁻¹B`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpacePair {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl StateSpacePair {
    /// Validates that `A` is stable and `(A, B)` reachable.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() != m || b.len() != m {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B has {} rows",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state-space entry".into()));
        }
        let radius = spectral_radius(&a);
        if radius >= 1.0 {
            return Err(Error::Unstable(radius));
        }
        let rank = reachability_rank(&a, &b);
        if rank < m {
            return Err(Error::NotReachable { rank, dim: m });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    // the QR iteration can stall on defective matrices such as the shift
    if let Some(schur) = Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    gelfand_radius(a)
}

/// `lim ‖A^k‖^{1/k}` by repeated squaring with renormalization.
fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut p = a / norm;
    let mut log_scale = norm.ln();
    let mut power = 1.0f64;
    for _ in 0..60 {
        let sq = &p * &p;
        let nu = sq.norm();
        if nu == 0.0 {
            return 0.0;
        }
        p = sq / nu;
        log_scale = 2.0 * log_scale + nu.ln();
        power *= 2.0;
    }
    (log_scale / power).exp()
}

fn reachability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let m = b.len();
    let mut ctrb = DMatrix::<f64>::zeros(m, m);
    let mut col = b.clone();
    for k in 0..m {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let scale = ctrb.norm().max(1.0);
    ctrb.svd(false, false).rank(1e-10 * scale)
}

/// `G(e^{iθ_j})` for every grid node, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSamples {
    grid: FrequencyGrid,
    dim: usize,
    values: Vec<Complex64>,
}

impl TransferSamples {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, j: usize) -> &[Complex64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `Re(G_j G_j*)` at node `j`.
    pub fn outer_real(&self, j: usize) -> DMatrix<f64> {
        let g = self.node(j);
        DMatrix::from_fn(self.dim, self.dim, |r, c| (g[r] * g[c].conj()).re)
    }
}

/// Solves `(I − e^{iθ_j} A) x = B` at every node.
pub fn eval_transfer(sys: &StateSpacePair, grid: &FrequencyGrid) -> Result<TransferSamples> {
    let m = sys.dim();
    let a = sys.a().map(|v| Complex64::new(v, 0.0));
    let b = sys.b().map(|v| Complex64::new(v, 0.0));
    let eye = DMatrix::<Complex64>::identity(m, m);
    let mut values = Vec::with_capacity(m * grid.len());
    for &theta in grid.angles() {
        let z = Complex64::from_polar(1.0, theta);
        let lhs = &eye - a.map(|v| v * z);
        let x = lhs
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Internal(format!("I − zA singular at θ = {theta}")))?;
        values.extend(x.iter().copied());
    }
    Ok(TransferSamples {
        grid: grid.clone(),
        dim: m,
        values,
    })
}
