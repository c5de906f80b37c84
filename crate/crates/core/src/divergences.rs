//! Pointwise quasi-distances and their dual maps.
//!
//! Sign convention: the Lagrangian is `D(Φ‖Ψ) + tr{Λ(∫GΦG* − Σ)}`, so at each
//! node the fitted spectrum minimizes `d(φ, ψ) + qφ` and the dual is
//! maximized. With that convention every divergence below satisfies
//!
//! * `F(q, ψ) = argmin_φ d(φ, ψ) + qφ`,
//! * `h(q, ψ) + c(ψ) = d(F, ψ) + qF` where `h` is [`Divergence::dual_integrand`]
//!   and `c` is [`Divergence::dual_constant`],
//! * `∂h/∂q = F` and `∂²h/∂q² = F' < 0`, so the dual integrand is concave.
//!
//! The feasibility margin of every divergence is affine in `q`.

use std::fmt;

use crate::error::Result;
use crate::spectral_core::SpectralSamples;

pub trait Divergence: fmt::Debug + Send + Sync {
    /// Registry identifier.
    fn name(&self) -> &'static str;

    /// Integrand `d(φ‖ψ)`; `+∞` where the divergence is undefined.
    fn distance(&self, phi: f64, psi: f64) -> f64;

    /// `∂d/∂φ`.
    fn distance_derivative(&self, phi: f64, psi: f64) -> f64;

    /// Pointwise minimizer `F(q; ψ)`.
    fn spectrum(&self, q: f64, psi: f64) -> f64;

    /// `∂F/∂q`.
    fn spectrum_derivative(&self, q: f64, psi: f64) -> f64;

    /// Dual integrand with the `q`-independent part removed.
    fn dual_integrand(&self, q: f64, psi: f64) -> f64;

    /// The `q`-independent part dropped from [`Self::dual_integrand`].
    fn dual_constant(&self, psi: f64) -> f64;

    /// Signed distance to the boundary of the dual domain, positive inside.
    fn margin(&self, q: f64, psi: f64) -> f64;

    fn in_domain(&self, q: f64, psi: f64) -> bool {
        self.margin(q, psi) > 0.0
    }
}

/// `d = ψ log(ψ/φ)`; `F = ψ/q`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KullbackLeibler;

/// `d = ½(φ − ψ)²/ψ`; `F = ψ(1 − q)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

/// `d = φ/ψ − log(φ/ψ) − 1`; `F = ψ/(1 + ψq)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ItakuraSaito;

/// `d = (√φ − √ψ)²`; `F = ψ/(1 + q)²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hellinger;

impl Divergence for KullbackLeibler {
    fn name(&self) -> &'static str {
        "kl"
    }

    fn distance(&self, phi: f64, psi: f64) -> f64 {
        if phi <= 0.0 {
            return f64::INFINITY;
        }
        psi * (psi / phi).ln()
    }

    fn distance_derivative(&self, phi: f64, psi: f64) -> f64 {
        -psi / phi
    }

    fn spectrum(&self, q: f64, psi: f64) -> f64 {
        psi / q
    }

    fn spectrum_derivative(&self, q: f64, psi: f64) -> f64 {
        -psi / (q * q)
    }

    fn dual_integrand(&self, q: f64, psi: f64) -> f64 {
        psi * q.ln()
    }

    fn dual_constant(&self, psi: f64) -> f64 {
        psi
    }

    fn margin(&self, q: f64, _psi: f64) -> f64 {
        q
    }
}

impl Divergence for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn distance(&self, phi: f64, psi: f64) -> f64 {
        0.5 * (phi - psi).powi(2) / psi
    }

    fn distance_derivative(&self, phi: f64, psi: f64) -> f64 {
        (phi - psi) / psi
    }

    fn spectrum(&self, q: f64, psi: f64) -> f64 {
        psi * (1.0 - q)
    }

    fn spectrum_derivative(&self, _q: f64, psi: f64) -> f64 {
        -psi
    }

    fn dual_integrand(&self, q: f64, psi: f64) -> f64 {
        -0.5 * psi * (q * q - 2.0 * q)
    }

    fn dual_constant(&self, _psi: f64) -> f64 {
        0.0
    }

    fn margin(&self, q: f64, _psi: f64) -> f64 {
        1.0 - q
    }
}

impl Divergence for ItakuraSaito {
    fn name(&self) -> &'static str {
        "itakura-saito"
    }

    fn distance(&self, phi: f64, psi: f64) -> f64 {
        if phi <= 0.0 {
            return f64::INFINITY;
        }
        let ratio = phi / psi;
        ratio - ratio.ln() - 1.0
    }

    fn distance_derivative(&self, phi: f64, psi: f64) -> f64 {
        1.0 / psi - 1.0 / phi
    }

    fn spectrum(&self, q: f64, psi: f64) -> f64 {
        psi / (1.0 + psi * q)
    }

    fn spectrum_derivative(&self, q: f64, psi: f64) -> f64 {
        let den = 1.0 + psi * q;
        -psi * psi / (den * den)
    }

    fn dual_integrand(&self, q: f64, psi: f64) -> f64 {
        (psi * q).ln_1p()
    }

    fn dual_constant(&self, _psi: f64) -> f64 {
        0.0
    }

    fn margin(&self, q: f64, psi: f64) -> f64 {
        1.0 + psi * q
    }
}

impl Divergence for Hellinger {
    fn name(&self) -> &'static str {
        "hellinger"
    }

    fn distance(&self, phi: f64, psi: f64) -> f64 {
        if phi < 0.0 {
            return f64::INFINITY;
        }
        (phi.sqrt() - psi.sqrt()).powi(2)
    }

    fn distance_derivative(&self, phi: f64, psi: f64) -> f64 {
        1.0 - (psi / phi).sqrt()
    }

    fn spectrum(&self, q: f64, psi: f64) -> f64 {
        psi / ((1.0 + q) * (1.0 + q))
    }

    fn spectrum_derivative(&self, q: f64, psi: f64) -> f64 {
        -2.0 * psi / (1.0 + q).powi(3)
    }

    fn dual_integrand(&self, q: f64, psi: f64) -> f64 {
        psi * q / (1.0 + q)
    }

    fn dual_constant(&self, _psi: f64) -> f64 {
        0.0
    }

    fn margin(&self, q: f64, _psi: f64) -> f64 {
        1.0 + q
    }
}

pub fn kullback_leibler() -> KullbackLeibler {
    KullbackLeibler
}

pub fn quadratic() -> Quadratic {
    Quadratic
}

pub fn itakura_saito() -> ItakuraSaito {
    ItakuraSaito
}

pub fn hellinger() -> Hellinger {
    Hellinger
}

/// CLI-facing identifiers, in registry order.
pub const NAMES: [&str; 4] = ["kl", "quadratic", "itakura-saito", "hellinger"];

pub fn by_name(name: &str) -> Option<Box<dyn Divergence>> {
    match name {
        "kl" => Some(Box::new(KullbackLeibler)),
        "quadratic" => Some(Box::new(Quadratic)),
        "itakura-saito" => Some(Box::new(ItakuraSaito)),
        "hellinger" => Some(Box::new(Hellinger)),
        _ => None,
    }
}

pub fn all() -> Vec<Box<dyn Divergence>> {
    NAMES.iter().filter_map(|n| by_name(n)).collect()
}

/// Discretized `D(Φ‖Ψ) = ∫ d(Φ, Ψ)`.
pub fn total_distance(div: &dyn Divergence, phi: &SpectralSamples, psi: &SpectralSamples) -> Result<f64> {
    phi.grid().check_same(psi.grid())?;
    let sum: f64 = phi
        .values()
        .iter()
        .zip(psi.values())
        .map(|(&p, &s)| div.distance(p, s))
        .sum();
    Ok(sum * phi.grid().weight())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRIORS: [f64; 3] = [0.1, 1.0, 10.0];

    /// Feasible multipliers on a log-spaced set, offset into each domain.
    fn feasible_qs(div: &dyn Divergence, psi: f64) -> Vec<f64> {
        let steps: Vec<f64> = (-6..=6).map(|e| 10f64.powf(e as f64 / 3.0)).collect();
        let mut out = Vec::new();
        for s in steps {
            for q in [s, -s, 0.0] {
                if div.margin(q, psi) > 1e-3 {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Brute-force minimizer of `d(φ, ψ) + qφ` over a bracketing scan
    /// refined by golden-section search.
    fn scan_minimizer(div: &dyn Divergence, q: f64, psi: f64, guess: f64) -> f64 {
        let f = |phi: f64| div.distance(phi, psi) + q * phi;
        let hi = 10.0 * guess.max(psi) + 1.0;
        let candidates = 1000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..=candidates {
            let phi = hi * i as f64 / candidates as f64;
            let v = f(phi);
            if v < best.0 {
                best = (v, phi);
            }
        }
        let step = hi / candidates as f64;
        let (mut a, mut b) = ((best.1 - step).max(1e-300), best.1 + step);
        let golden = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - golden * (b - a);
            let d = a + golden * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn registry_round_trip() {
        for name in NAMES {
            assert_eq!(by_name(name).unwrap().name(), name);
        }
        assert!(by_name("euclid").is_none());
        assert_eq!(all().len(), 4);
    }

    #[test]
    fn kl_examples() {
        let kl = kullback_leibler();
        for psi in PRIORS {
            assert_eq!(kl.spectrum(1.0, psi), psi);
            assert_eq!(kl.distance(psi, psi), 0.0);
        }
        // unit prior: F = 1/Q, an AR-type spectrum
        let q = 1.0 + 0.5 * 0.3f64.cos();
        assert!((kl.spectrum(q, 1.0) - 1.0 / q).abs() < 1e-16);
    }

    #[test]
    fn quadratic_examples() {
        let d = quadratic();
        for psi in PRIORS {
            assert_eq!(d.spectrum(0.0, psi), psi);
            assert!((d.distance(2.0 * psi, psi) - psi / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn itakura_saito_examples() {
        let d = itakura_saito();
        for psi in PRIORS {
            assert_eq!(d.spectrum(0.0, psi), psi);
            assert!(d.distance(psi, psi).abs() < 1e-15);
        }
        assert!((d.spectrum(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        let brute = scan_minimizer(&d, 0.5, 1.0, 1.0);
        assert!((brute - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn hellinger_examples() {
        let d = hellinger();
        assert_eq!(d.spectrum(0.0, 3.0), 3.0);
        assert!((d.distance(4.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((d.spectrum(1.0, 1.0) - 0.25).abs() < 1e-15);
        let brute = scan_minimizer(&d, 1.0, 1.0, 1.0);
        assert!((brute - 0.25).abs() < 1e-6);
    }

    #[test]
    fn spectrum_minimizes_pointwise_lagrangian() {
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    let f = div.spectrum(q, psi);
                    let brute = scan_minimizer(div.as_ref(), q, psi, f);
                    let tol = 1e-6 * (1.0 + f);
                    assert!(
                        (brute - f).abs() <= tol,
                        "{} q={q} psi={psi}: F={f} brute={brute}",
                        div.name()
                    );
                    let lag = |phi: f64| div.distance(phi, psi) + q * phi;
                    for eps in [1e-3, 1e-2, 1e-1] {
                        assert!(lag(f) <= lag(f * (1.0 + eps)) + 1e-12);
                        assert!(lag(f) <= lag(f * (1.0 - eps)) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn distance_derivative_matches_finite_difference() {
        for div in all() {
            for psi in PRIORS {
                for phi in [0.05, 0.3, 1.0, 4.0, 25.0] {
                    let h = 1e-6 * phi;
                    let fd = (div.distance(phi + h, psi) - div.distance(phi - h, psi)) / (2.0 * h);
                    let an = div.distance_derivative(phi, psi);
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{}", div.name());
                }
            }
        }
    }

    #[test]
    fn stationarity_of_spectrum() {
        // ∂d/∂φ at F(q) equals −q
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    let f = div.spectrum(q, psi);
                    let g = div.distance_derivative(f, psi);
                    assert!((g + q).abs() <= 1e-9 * q.abs().max(1.0), "{}", div.name());
                }
            }
        }
    }

    #[test]
    fn spectrum_positive_inside_domain() {
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    assert!(div.spectrum(q, psi) > 0.0);
                }
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    let h = 1e-6 * (1.0 + q.abs()) * div.margin(q, psi).min(1.0);
                    let fd = (div.spectrum(q + h, psi) - div.spectrum(q - h, psi)) / (2.0 * h);
                    let an = div.spectrum_derivative(q, psi);
                    assert!(
                        (fd - an).abs() <= 1e-6 * an.abs().max(1e-12),
                        "{} q={q} psi={psi}: {an} vs {fd}",
                        div.name()
                    );
                }
            }
        }
    }

    #[test]
    fn integrand_derivative_is_spectrum() {
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    let h = 1e-6 * (1.0 + q.abs()) * div.margin(q, psi).min(1.0);
                    let fd = (div.dual_integrand(q + h, psi) - div.dual_integrand(q - h, psi))
                        / (2.0 * h);
                    let f = div.spectrum(q, psi);
                    assert!(
                        (fd - f).abs() <= 1e-6 * f.max(1.0),
                        "{} q={q} psi={psi}: h'={fd} F={f}",
                        div.name()
                    );
                }
            }
        }
    }

    #[test]
    fn integrand_is_lagrangian_value() {
        for div in all() {
            for psi in PRIORS {
                for q in feasible_qs(div.as_ref(), psi) {
                    let f = div.spectrum(q, psi);
                    let value = div.distance(f, psi) + q * f;
                    let dual = div.dual_integrand(q, psi) + div.dual_constant(psi);
                    assert!(
                        (value - dual).abs() <= 1e-9 * value.abs().max(1.0),
                        "{} q={q} psi={psi}",
                        div.name()
                    );
                }
            }
        }
    }

    #[test]
    fn margin_is_affine_and_vanishes_on_boundary() {
        for div in all() {
            for psi in PRIORS {
                let m0 = div.margin(0.0, psi);
                let m1 = div.margin(1.0, psi);
                let m3 = div.margin(3.0, psi);
                assert!((m3 - (m0 + 3.0 * (m1 - m0))).abs() < 1e-12);
            }
        }
        // approaching the boundary from inside the spectrum stays nonnegative
        let q = quadratic();
        assert!(q.spectrum(1.0 - 1e-12, 2.0) >= 0.0);
        assert!(q.spectrum(1.0, 2.0).abs() < 1e-15);
        assert!(kullback_leibler().spectrum(1e-12, 1.0) > 1e11);
    }

    #[test]
    fn kl_distance_nonnegative_at_equal_mass() {
        // ψ log(ψ/φ) is not pointwise nonnegative; its integral is, once the
        // total masses agree (Jensen).
        let kl = kullback_leibler();
        let psi = [0.5, 1.0, 2.0, 0.5];
        let phi = [1.0, 1.0, 1.5, 0.5];
        let total: f64 = psi.iter().zip(&phi).map(|(s, p)| kl.distance(*p, *s)).sum();
        assert!(total >= 0.0);
        assert!(kl.distance(2.0, 1.0) < 0.0);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn quasi_distance_axioms(phi in 1e-3f64..1e3, psi in 1e-3f64..1e3) {
            for div in [&Quadratic as &dyn Divergence, &ItakuraSaito, &Hellinger] {
                prop_assert!(div.distance(phi, psi) >= 0.0);
                prop_assert!(div.distance(psi, psi).abs() <= 1e-12 * psi.max(1.0));
            }
            prop_assert_eq!(KullbackLeibler.distance(psi, psi), 0.0);
        }
    }
}
