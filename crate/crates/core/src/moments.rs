//! Covariance and state-covariance data.
//!
//! Estimates from short records are allowed to be indefinite or to lack the
//! structure implied by `(A, B)`; positivity is something to query, never a
//! constructor precondition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral_core::{SpectralSamples, StateSpacePair, TransferSamples};

/// Relative eigenvalue tolerance for positivity checks.
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Lags `r₀..r_n` of a scalar stationary process.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceWindow {
    lags: Vec<f64>,
}

impl CovarianceWindow {
    pub fn new(lags: Vec<f64>) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::Dimension("covariance window needs r₀".into()));
        }
        if lags.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance lag".into()));
        }
        Ok(Self { lags })
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Highest lag index `n`.
    pub fn degree(&self) -> usize {
        self.lags.len() - 1
    }

    /// Membership in the set of windows with positive definite Toeplitz matrix.
    pub fn is_in_r(&self) -> bool {
        is_positive_definite(&toeplitz(self), true)
    }
}

/// Symmetric `m×m` matrix; symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCovariance {
    matrix: DMatrix<f64>,
}

impl StateCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "state covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state covariance entry".into()));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix: sym })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    mean: Option<f64>,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        Self::with_mean(samples, None)
    }

    /// A series whose known mean is removed before any estimate.
    pub fn with_mean(samples: Vec<f64>, mean: Option<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: samples.len(),
            });
        }
        if samples.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time-series sample".into()));
        }
        Ok(Self { samples, mean })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn centered(&self) -> Vec<f64> {
        let mu = self.mean.unwrap_or(0.0);
        self.samples.iter().map(|y| y - mu).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Divide lag-`k` sums by `T`.
    Biased,
    /// Divide lag-`k` sums by `T − k`.
    Unbiased,
}

pub fn sample_covariances(y: &TimeSeries, n: usize, mode: Estimator) -> Result<CovarianceWindow> {
    let t = y.len();
    if n >= t {
        return Err(Error::SeriesTooShort {
            needed: n + 1,
            got: t,
        });
    }
    let x = y.centered();
    let lags = (0..=n)
        .map(|k| {
            let s: f64 = x[k..].iter().zip(&x[..t - k]).map(|(a, b)| a * b).sum();
            match mode {
                Estimator::Biased => s / t as f64,
                Estimator::Unbiased => s / (t - k) as f64,
            }
        })
        .collect();
    CovarianceWindow::new(lags)
}

/// `T(r)` with entry `(i, j) = r_{|i−j|}`.
pub fn toeplitz(r: &CovarianceWindow) -> StateCovariance {
    let m = r.lags.len();
    let matrix = DMatrix::from_fn(m, m, |i, j| r.lags[i.abs_diff(j)]);
    StateCovariance { matrix }
}

/// Eigenvalue test against `POSITIVITY_TOL · max(1, ‖Σ‖₂)`.
///
/// `strict` asks for positive definiteness; otherwise semidefiniteness up to
/// the same tolerance.
pub fn is_positive_definite(sigma: &StateCovariance, strict: bool) -> bool {
    let eig = sigma.matrix.clone().symmetric_eigenvalues();
    let scale = eig.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let eps = POSITIVITY_TOL * scale;
    if strict {
        min > eps
    } else {
        min >= -eps
    }
}

/// Down-shift pair of order `n`: `G(z) = (1, z, …, z^n)ᵀ`.
pub fn shift_pair(n: usize) -> StateSpacePair {
    let m = n + 1;
    let a = DMatrix::from_fn(m, m, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(m);
    b[0] = 1.0;
    StateSpacePair::new(a, b).expect("shift pair is stable and reachable")
}

/// `Σ = (1/N) Σ_j Φ_j Re(G_j G_j*)`.
pub fn state_covariance_from_psd(
    g: &TransferSamples,
    phi: &SpectralSamples,
) -> Result<StateCovariance> {
    g.grid().check_same(phi.grid())?;
    let m = g.dim();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    for (j, &p) in phi.values().iter().enumerate() {
        let node = g.node(j);
        for r in 0..m {
            for c in r..m {
                acc[(r, c)] += p * (node[r] * node[c].conj()).re;
            }
        }
    }
    acc *= g.grid().weight();
    acc.fill_lower_triangle_with_upper_triangle();
    StateCovariance::new(acc)
}

/// Default transient discard for [`state_covariance_from_data`].
pub fn default_burn_in(sys: &StateSpacePair) -> usize {
    10 * sys.dim()
}

/// Runs `x_{t+1} = A x_t + B y_t` from rest and averages `x_t x_tᵀ` over
/// `t > burn_in`.
pub fn state_covariance_from_data(
    sys: &StateSpacePair,
    y: &TimeSeries,
    burn_in: usize,
) -> Result<StateCovariance> {
    let t_len = y.len();
    if t_len <= burn_in + 1 {
        return Err(Error::SeriesTooShort {
            needed: burn_in + 2,
            got: t_len,
        });
    }
    let m = sys.dim();
    let mut x = DVector::<f64>::zeros(m);
    let mut acc = DMatrix::<f64>::zeros(m, m);
    let mut count = 0usize;
    for (t, yt) in y.centered().into_iter().enumerate() {
        x = sys.a() * &x + sys.b() * yt;
        // x now holds x_{t+1}
        if t + 1 > burn_in {
            acc.ger(1.0, &x, &x, 1.0);
            count += 1;
        }
    }
    StateCovariance::new(acc / count as f64)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::spectral_core::{eval_transfer, fourier_coeffs, make_grid};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn biased_toeplitz_is_psd(y in prop::collection::vec(-10.0f64..10.0, 2..60), n in 0usize..8) {
            let t = y.len();
            let n = n.min(t - 1);
            let r = sample_covariances(&TimeSeries::new(y).unwrap(), n, Estimator::Biased).unwrap();
            let s = toeplitz(&r);
            let scale = 1.0f64.max(s.matrix().norm());
            prop_assert!(s.min_eigenvalue() >= -1e-10 * scale);
        }

        #[test]
        fn forward_map_consistent_with_toeplitz(vals in prop::collection::vec(0.0f64..5.0, 64), n in 0usize..6) {
            let grid = make_grid(64).unwrap();
            let phi = SpectralSamples::new(&grid, vals).unwrap();
            let g = eval_transfer(&shift_pair(n), &grid).unwrap();
            let s = state_covariance_from_psd(&g, &phi).unwrap();
            let t = toeplitz(&fourier_coeffs(&phi, n).unwrap());
            prop_assert!((s.matrix() - t.matrix()).amax() <= 1e-10);
        }
    }
}
