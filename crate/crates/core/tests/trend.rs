use nalgebra::{DMatrix, DVector};
use pibic::trend::simulate_star;
use pibic::{build_covariance, fit_star, gaussian_loglik, select_trend, simulate_null_star, StarSeriesModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(n: usize) -> StarSeriesModel {
    StarSeriesModel {
        degree: 1,
        beta: vec![300.0, 0.4],
        rho: 0.6,
        sigma_z2: 2.0,
        v0: 1.0,
        v1: -0.05,
        n,
    }
}

#[test]
fn covariance_matches_path_simulation() {
    let m = model(7);
    let cov = build_covariance(&m).unwrap();
    let mean = m.mean();
    let paths = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut acc = DMatrix::<f64>::zeros(7, 7);
    for _ in 0..paths {
        let y = DVector::from_vec(simulate_star(&m, &mut rng)) - &mean;
        acc += &y * y.transpose();
    }
    acc /= paths as f64;
    for i in 0..7 {
        for j in 0..7 {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / paths as f64).sqrt();
            assert!(
                (acc[(i, j)] - cov[(i, j)]).abs() <= 4.0 * se,
                "({i},{j}): simulated {} vs {}",
                acc[(i, j)],
                cov[(i, j)]
            );
        }
    }
}

#[test]
fn loglik_matches_brute_force_density() {
    for n in [1, 2, 5, 10] {
        let m = model(n);
        let y: Vec<f64> = (0..n).map(|j| 300.0 + 0.4 * (j + 1) as f64 + (j as f64 * 1.3).sin()).collect();
        let cov = build_covariance(&m).unwrap();
        let inv = cov.clone().try_inverse().unwrap();
        let r = DVector::from_vec(y.clone()) - m.mean();
        let quad = (r.transpose() * &inv * &r)[(0, 0)];
        let oracle = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad);
        let got = gaussian_loglik(&y, &m).unwrap();
        assert!((got - oracle).abs() <= 1e-8 * oracle.abs().max(1.0), "n={n}: {got} vs {oracle}");
    }
}

#[test]
fn quadratic_trend_is_detected() {
    let n = 80;
    let truth = StarSeriesModel {
        degree: 2,
        beta: vec![330.0, -1.2, 0.02],
        rho: 0.3,
        sigma_z2: 1.0,
        v0: 1.0,
        v1: 0.0,
        n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = simulate_star(&truth, &mut rng);
    let sel = select_trend(&y, 5).unwrap();
    assert!(sel.bic_degree >= 2, "selected degree {}", sel.bic_degree);
    assert!(sel.pi_bic.value < 1e-3, "π_BIC = {}", sel.pi_bic.value);
    assert!(sel.pi_singleton.value < 1e-2);
    let fit = &sel.fits[2];
    assert!((fit.model.beta[2] - 0.02).abs() < 0.01, "β₂ = {}", fit.model.beta[2]);
}

#[test]
fn null_series_is_rarely_rejected() {
    let mut small = 0;
    for seed in 0..10 {
        let y = simulate_null_star(0.0, -0.001816, 76, seed).unwrap();
        let sel = select_trend(&y, 6).unwrap();
        assert!(sel.pi_bic.value > 0.0 && sel.pi_bic.value <= 1.0);
        small += usize::from(sel.pi_bic.value < 0.01);
    }
    assert!(small <= 2, "{small} of 10 null series gave π_BIC < 0.01");
}

#[test]
fn fit_reports_consistent_likelihood() {
    let y = simulate_null_star(0.5, 0.0, 60, 3).unwrap();
    let fit = fit_star(&y, 1).unwrap();
    let direct = gaussian_loglik(&y, &fit.model).unwrap();
    assert!((direct - fit.max_loglik).abs() < 1e-6 * direct.abs().max(1.0));
    assert!(fit.model.rho.abs() < 1.0 && fit.model.sigma_z2 >= 0.0);
}
