use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::divergences::{self, Divergence};
use crate::moments::{shift_pair, state_covariance_from_psd, toeplitz, CovarianceWindow, StateCovariance};
use crate::spectral_core::{eval_transfer, fourier_coeffs, make_grid, FrequencyGrid};

fn window(lags: &[f64]) -> MomentConstraint {
    MomentConstraint::Covariances(CovarianceWindow::new(lags.to_vec()).unwrap())
}

fn general(sigma: DMatrix<f64>, grid: &FrequencyGrid) -> MomentConstraint {
    let m = sigma.nrows();
    let g = eval_transfer(&shift_pair(m - 1), grid).unwrap();
    MomentConstraint::state(StateCovariance::new(sigma).unwrap(), g).unwrap()
}

/// Yule-Walker solution by the Levinson-Durbin recursion: `(a, σ²)` with
/// `y_t + Σ a_k y_{t−k} = e_t`.
fn levinson_durbin(r: &[f64]) -> (Vec<f64>, f64) {
    let n = r.len() - 1;
    let mut a = vec![0.0; n + 1];
    a[0] = 1.0;
    let mut err = r[0];
    for k in 1..=n {
        let acc: f64 = (0..k).map(|j| a[j] * r[k - j]).sum();
        let refl = -acc / err;
        let prev = a.clone();
        for j in 1..k {
            a[j] = prev[j] + refl * prev[k - j];
        }
        a[k] = refl;
        err *= 1.0 - refl * refl;
    }
    (a[1..].to_vec(), err)
}

fn ar_spectrum(a: &[f64], var: f64, t: f64) -> f64 {
    let z = Complex64::from_polar(1.0, t);
    let mut poly = Complex64::new(1.0, 0.0);
    let mut zk = Complex64::new(1.0, 0.0);
    for ak in a {
        zk *= z;
        poly += zk * ak;
    }
    var / poly.norm_sqr()
}

#[test]
fn white_data_white_prior() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let opts = SolverOptions::default();
    for c in [window(&[1.0, 0.0, 0.0]), general(DMatrix::identity(3, 3), &grid)] {
        let sol = solve_exact(&kl, &psi, &c, &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.phi.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(sol.q.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

#[test]
fn exact_residual_vanishes_at_unit_multiplier() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let c = general(DMatrix::identity(3, 3), &grid);
    let reg = RegularizationConfig::None;
    let problem = DualProblem::new(&kl, &psi, &c, &reg, SignConvention::Standard).unwrap();
    // Λ = I/3 gives Q = tr Λ = 1 for the shift pair
    let x = lambda_to_params(&(DMatrix::identity(3, 3) / 3.0));
    assert!(problem.residual(&x).norm() < 1e-12);
}

#[test]
fn maximum_entropy_matches_levinson_durbin() {
    let grid = make_grid(2048).unwrap();
    let a_true = [-0.6, 0.3, -0.2, 0.1];
    let truth = SpectralSamples::from_fn(&grid, |t| ar_spectrum(&a_true, 1.0, t));
    let r = fourier_coeffs(&truth, 4).unwrap();
    let (a, var) = levinson_durbin(r.lags());
    let psi = SpectralSamples::constant(&grid, 1.0);
    let sol = solve_exact(
        &divergences::kullback_leibler(),
        &psi,
        &MomentConstraint::Covariances(r.clone()),
        &SolverOptions::default(),
    )
    .unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    for (j, &t) in grid.angles().iter().enumerate() {
        let expect = ar_spectrum(&a, var, t);
        assert!((sol.phi.values()[j] - expect).abs() <= 1e-6 * expect);
    }
    let fitted = fourier_coeffs(&sol.phi, 4).unwrap();
    for (x, y) in fitted.lags().iter().zip(r.lags()) {
        assert!((x - y).abs() <= 1e-8 * r.lags()[0]);
    }
}

#[test]
fn quadratic_boundary_has_active_oracle_nodes() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let quad = divergences::quadratic();
    let sol = solve_exact(&quad, &psi, &window(&[1.0, 0.9, 0.8]), &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Boundary);
    assert!(sol.min_margin < 1e-8);
    let target = toeplitz(&CovarianceWindow::new(vec![1.0, 0.9, 0.8]).unwrap());
    let g = eval_transfer(&shift_pair(2), &grid).unwrap();
    let oracle = brute_force_primal(&quad, &psi, &target, &g, &RegularizationConfig::None).unwrap();
    assert!(oracle.violation <= 1e-6);
    assert!(!oracle.active_set(1e-9).is_empty());
}

#[test]
fn oracle_trivial_white_instance() {
    let grid = make_grid(32).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let g = eval_transfer(&shift_pair(1), &grid).unwrap();
    let sigma = StateCovariance::new(DMatrix::identity(2, 2)).unwrap();
    let kl = divergences::kullback_leibler();
    let oracle = brute_force_primal(&kl, &psi, &sigma, &g, &RegularizationConfig::None).unwrap();
    assert!(oracle.phi.values().iter().all(|v| (v - 1.0).abs() < 1e-6));
    let dual = DualRegularized::reject(&kl, &psi, &sigma, &g);
    assert!(matches!(dual, Err(Error::InvalidRegularization(_))));
}

struct DualRegularized;

impl DualRegularized {
    fn reject(
        div: &dyn Divergence,
        psi: &SpectralSamples,
        sigma: &StateCovariance,
        g: &crate::spectral_core::TransferSamples,
    ) -> Result<PrimalOracle> {
        let reg = RegularizationConfig::Dual {
            lambda: 1.0,
            barrier: Barrier::B1,
        };
        brute_force_primal(div, psi, sigma, g, &reg)
    }
}

#[test]
fn deviation_shrinks_with_weight() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let c = window(&[1.0, 0.5, 0.1]);
    let mut last = f64::INFINITY;
    for e in 0..=6 {
        let w = 10f64.powi(e);
        let weight = DMatrix::identity(3, 3) * w;
        let sol = solve_primal_regularized(&kl, &psi, &c, &weight, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        let dev = sol.deviation.unwrap().norm();
        assert!(dev <= last * (1.0 + 1e-12), "w = {w}: {dev} > {last}");
        last = dev;
    }
    assert!(last <= 1e-5);
}

#[test]
fn deviation_formula_and_non_toeplitz_perturbation() {
    let grid = make_grid(128).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let mut sigma = toeplitz(&CovarianceWindow::new(vec![1.0, 0.4, 0.1]).unwrap())
        .matrix()
        .clone();
    let eps = 0.05;
    sigma[(0, 1)] += eps;
    sigma[(1, 0)] += eps;
    let c = general(sigma.clone(), &grid);
    let weight = DMatrix::identity(3, 3) * 10.0;
    let reg = RegularizationConfig::Primal {
        weight: weight.clone(),
    };
    let sol = solve(&kl, &psi, &c, &reg, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let problem = DualProblem::new(&kl, &psi, &c, &reg, SignConvention::Standard).unwrap();
    let lambda_p = sol.lambda_reversed(&problem);
    let w_inv = weight.clone().try_inverse().unwrap();
    let dev = sol.deviation.clone().unwrap();
    assert!((&dev + &w_inv * &lambda_p * 0.5).amax() <= 1e-10);
    let rhs = (&lambda_p * &w_inv + &w_inv * &lambda_p) * 0.25;
    let defect = &sigma - &(sol.defect.clone() + &sigma);
    assert!((defect - rhs).amax() <= 1e-8);
    // a Toeplitz fit cannot reproduce the asymmetric bump; the deviation
    // must push against it on the perturbed band
    assert!(dev.norm() > 1e-4);
    let bump_dir = dev[(0, 1)] - dev[(1, 2)];
    assert!(bump_dir < 0.0);
}

#[test]
fn log_barrier_equals_prior_shift() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::from_fn(&grid, |t| 1.0 + 0.5 * t.cos());
    let kl = divergences::kullback_leibler();
    let c = window(&[1.0, 0.3, -0.2]);
    let opts = SolverOptions::default();
    for lambda in [0.1, 1.0, 10.0] {
        let reg = solve_dual_regularized(&kl, &psi, &c, lambda, Barrier::Log, &opts).unwrap();
        let shifted = psi.map(|v| v + lambda);
        let exact = solve_exact(&kl, &shifted, &c, &opts).unwrap();
        assert!(reg.converged() && exact.converged());
        let fitted = SpectralSamples::new(
            &grid,
            reg.q.values().iter().zip(psi.values()).map(|(q, p)| p / q).collect(),
        )
        .unwrap();
        let exact_fit = SpectralSamples::new(
            &grid,
            exact.q.values().iter().zip(psi.values()).map(|(q, p)| p / q).collect(),
        )
        .unwrap();
        assert!(fitted.sup_distance(&exact_fit).unwrap() <= 1e-8);
    }
}

#[test]
fn barrier_path_approaches_exact_solution() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let c = window(&[1.0, 0.5, 0.2]);
    let opts = SolverOptions::default();
    let exact = solve_exact(&kl, &psi, &c, &opts).unwrap();
    let mut last = f64::INFINITY;
    for lambda in [1.0, 0.1, 0.01, 0.001] {
        let sol = solve_dual_regularized(&kl, &psi, &c, lambda, Barrier::B1, &opts).unwrap();
        assert!(sol.converged());
        let dist = sol.phi.sup_distance(&exact.phi).unwrap();
        assert!(dist < last);
        last = dist;
    }
}

#[test]
fn non_psd_state_covariance_is_unbounded() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let c = general(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.2])), &grid);
    for lambda in [0.1, 1.0, 10.0] {
        let sol = solve_dual_regularized(&kl, &psi, &c, lambda, Barrier::B1, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
        assert!(sol.iterations <= 200);
    }
}

#[test]
fn barrier_residual_identities() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let c = window(&[1.0, 0.4, 0.1]);
    let sigma = c.sigma();
    for div in divergences::all() {
        for barrier in [Barrier::B1, Barrier::B2] {
            let sol = solve_dual_regularized(div.as_ref(), &psi, &c, 0.5, barrier, &SolverOptions::default()).unwrap();
            assert!(sol.converged(), "{} {:?}", div.name(), barrier);
            let q = sol.q.values();
            let w: Vec<f64> = q
                .iter()
                .map(|&qj| match barrier {
                    Barrier::B1 => 1.0 / (1.0 + qj),
                    _ => 1.0 / (1.0 + qj).powi(2),
                })
                .collect();
            let lags: Vec<f64> = (0..3)
                .map(|k| {
                    grid.angles()
                        .iter()
                        .zip(&w)
                        .map(|(t, v)| v * (k as f64 * t).cos())
                        .sum::<f64>()
                        * grid.weight()
                })
                .collect();
            let rhs = toeplitz(&CovarianceWindow::new(lags).unwrap()).matrix() * 0.5;
            let lhs = -sol.defect.clone();
            assert!((lhs - rhs).norm() <= 1e-8 * (1.0 + sigma.frobenius_norm()));
        }
    }
}

#[test]
fn perturbed_optimum_has_large_residual() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let kl = divergences::kullback_leibler();
    let c = window(&[1.0, 0.5, 0.2]);
    let opts = SolverOptions::default();
    let sol = solve_exact(&kl, &psi, &c, &opts).unwrap();
    let mut q = sol.variable.params();
    q[0] += 0.01;
    let moved = DualSolution {
        variable: DualVariable::Toeplitz(PseudoPolynomial::new(q.iter().copied().collect()).unwrap()),
        ..sol.clone()
    };
    let res = stationarity_residual(&moved, &kl, &psi, &c, &RegularizationConfig::None).unwrap();
    assert!(res.norm() > 10.0 * opts.tol);
    let res = stationarity_residual(&sol, &kl, &psi, &c, &RegularizationConfig::None).unwrap();
    assert!(res.norm() <= opts.tol * (1.0 + sol.sigma_norm));
}

fn regimes(m: usize) -> Vec<RegularizationConfig> {
    vec![
        RegularizationConfig::None,
        RegularizationConfig::Primal {
            weight: DMatrix::from_fn(m, m, |i, j| if i == j { 2.0 } else { 0.3 }),
        },
        RegularizationConfig::Dual {
            lambda: 0.7,
            barrier: Barrier::B1,
        },
        RegularizationConfig::Dual {
            lambda: 0.7,
            barrier: Barrier::B2,
        },
    ]
}

/// Random feasible point: a positive pseudo-polynomial, scaled into the
/// divergence domain.
fn random_point(problem: &DualProblem<'_>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let p = problem.dim();
        let x = DVector::from_fn(p, |_, _| rng.random_range(-0.3..0.3));
        let mut x = x;
        match problem.constraint() {
            MomentConstraint::Covariances(_) => x[0] = rng.random_range(0.6..0.9),
            MomentConstraint::State { .. } => {
                let m = problem.constraint().dim();
                let mut lam = params_to_lambda(&x, m);
                for i in 0..m {
                    lam[(i, i)] = rng.random_range(0.6..0.9) / m as f64 + 0.5 * lam[(i, i)].abs();
                }
                x = lambda_to_params(&lam);
            }
        }
        let x = x * problem.convention().sign();
        if problem.min_margin(&x) > 0.05 {
            return x;
        }
    }
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::from_fn(&grid, |t| 1.0 + 0.3 * t.cos());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let toeplitz_c = window(&[1.0, 0.3, 0.1]);
    let general_c = general(
        toeplitz(&CovarianceWindow::new(vec![1.0, 0.3, 0.1]).unwrap()).matrix().clone(),
        &grid,
    );
    for c in [&toeplitz_c, &general_c] {
        for div in divergences::all() {
            for reg in regimes(3) {
                for conv in [SignConvention::Standard, SignConvention::Reversed] {
                    let problem = DualProblem::new(div.as_ref(), &psi, c, &reg, conv).unwrap();
                    for _ in 0..3 {
                        let x = random_point(&problem, &mut rng);
                        let g = problem.gradient(&x);
                        let h = problem.hessian(&x);
                        for a in 0..problem.dim() {
                            let step = 1e-6;
                            let mut e = DVector::zeros(problem.dim());
                            e[a] = step;
                            let fd = (problem.objective(&(&x + &e)) - problem.objective(&(&x - &e))) / (2.0 * step);
                            assert!((fd - g[a]).abs() <= 1e-5 * (1.0 + g[a].abs()));
                            let gd = (problem.gradient(&(&x + &e)) - problem.gradient(&(&x - &e))) / (2.0 * step);
                            for b in 0..problem.dim() {
                                assert!((gd[b] - h[(b, a)]).abs() <= 1e-5 * (1.0 + h[(b, a)].abs()));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn dual_objective_is_midpoint_concave() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = window(&[2.0, 0.5, 0.3]);
    for div in divergences::all() {
        for reg in regimes(3) {
            let problem = DualProblem::new(div.as_ref(), &psi, &c, &reg, SignConvention::Standard).unwrap();
            for _ in 0..10 {
                let a = random_point(&problem, &mut rng);
                let b = random_point(&problem, &mut rng);
                let mid = problem.objective(&((&a + &b) * 0.5));
                let avg = 0.5 * (problem.objective(&a) + problem.objective(&b));
                assert!(mid >= avg - 1e-10);
            }
        }
    }
}

#[test]
fn conventions_give_identical_fits() {
    let grid = make_grid(256).unwrap();
    let psi = SpectralSamples::from_fn(&grid, |t| 1.5 + t.sin().powi(2));
    let kl = divergences::kullback_leibler();
    let c = window(&[1.0, 0.2, -0.3, 0.1]);
    let std = solve_exact(&kl, &psi, &c, &SolverOptions::default()).unwrap();
    let reversed = solve_exact(
        &kl,
        &psi,
        &c,
        &SolverOptions {
            convention: SignConvention::Reversed,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    assert!(std.converged() && reversed.converged());
    assert!(std.phi.sup_distance(&reversed.phi).unwrap() <= 1e-10);
    assert!((std.variable.params() + reversed.variable.params()).amax() <= 1e-10);
    assert!((std.objective - reversed.objective).abs() <= 1e-10);
}

#[test]
fn multiplier_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in 1..6 {
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let lambda = (&raw + raw.transpose()) * 0.5;
        let back = params_to_lambda(&lambda_to_params(&lambda), m);
        assert!((back - &lambda).amax() <= 1e-12);

        let q = DualVariable::General(lambda.clone()).to_pseudopolynomial();
        let rep = DualVariable::lambda_for(&q);
        let q2 = DualVariable::General(rep).to_pseudopolynomial();
        for (a, b) in q.coeffs().iter().zip(q2.coeffs()) {
            assert!((a - b).abs() <= 1e-12);
        }

        // G*ΛG equals the induced pseudo-polynomial on the shift pair
        let grid = make_grid(32).unwrap();
        let g = eval_transfer(&shift_pair(m - 1), &grid).unwrap();
        for j in 0..grid.len() {
            let node = g.node(j);
            let mut v = Complex64::new(0.0, 0.0);
            for r in 0..m {
                for s in 0..m {
                    v += node[r].conj() * lambda[(r, s)] * node[s];
                }
            }
            assert!((v.re - q.eval(grid.angle(j))).abs() <= 1e-12);
        }
    }
}

#[test]
fn weak_duality_and_gap() {
    let grid = make_grid(64).unwrap();
    let psi = SpectralSamples::constant(&grid, 1.0);
    let truth = SpectralSamples::from_fn(&grid, |t| 1.0 + 0.6 * t.cos() + 0.2 * (2.0 * t).cos());
    let g = eval_transfer(&shift_pair(2), &grid).unwrap();
    let sigma = state_covariance_from_psd(&g, &truth).unwrap();
    let c = MomentConstraint::state(sigma.clone(), g.clone()).unwrap();
    for div in [divergences::by_name("kl").unwrap(), divergences::by_name("itakura-saito").unwrap()] {
        let sol = solve_exact(div.as_ref(), &psi, &c, &SolverOptions::default()).unwrap();
        assert!(sol.converged());
        let oracle = brute_force_primal(div.as_ref(), &psi, &sigma, &g, &RegularizationConfig::None).unwrap();
        assert!(oracle.objective >= sol.objective - 1e-7);
        assert!((oracle.objective - sol.objective).abs() <= 1e-5);
        assert!(oracle.phi.sup_distance(&sol.phi).unwrap() <= 1e-3);
    }
}

#[test]
fn options_validation() {
    assert!(SolverOptions::default().validate().is_ok());
    let bad = SolverOptions {
        fraction_to_boundary: 1.0,
        ..SolverOptions::default()
    };
    assert!(bad.validate().is_err());
    let bad = SolverOptions {
        tol: 0.0,
        ..SolverOptions::default()
    };
    assert!(bad.validate().is_err());
    assert!(RegularizationConfig::Dual { lambda: 0.0, barrier: Barrier::B1 }.validate().is_err());
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(RegularizationConfig::Primal { weight: indefinite }.validate().is_err());
}

#[test]
fn rejects_nonpositive_prior() {
    let grid = make_grid(16).unwrap();
    let psi = SpectralSamples::from_fn(&grid, f64::cos);
    let err = solve_exact(
        &divergences::kullback_leibler(),
        &psi,
        &window(&[1.0, 0.1]),
        &SolverOptions::default(),
    );
    assert!(matches!(err, Err(Error::NonPositivePrior(_))));
}
