//! Polynomial trend with AR(1) intrinsic noise and differenced,
//! heteroscedastic measurement error.
//!
//! For `j = 1..n`
//!
//! ```text
//! Y_j = β₀ + β₁ j + … + β_k j^k + I_j + ε_j − ε_{j−1}
//! I_j = ρ I_{j−1} + Z_j,   Var Z_j = σ_Z²,   Var ε_j = exp(v₀ + v₁ j)
//! ```
//!
//! Maximum likelihood runs through a Kalman filter on the state
//! `(I_j, ε_j, ε_{j−1})`. The filter whitens the response and every mean
//! column with the same gains, so β comes from least squares on whitened
//! data and the scale `e^{v₀}` is profiled out in closed form. The dense
//! [`gaussian_loglik`] is kept as the reference evaluation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alternatives::{FamilyFit, FamilyKind};
use crate::basis::legendre_design;
use crate::bootstrap::{run_bootstrap, BootstrapSpec, Tail};
use crate::error::{Error, Result};
use crate::optim::nelder_mead;
use crate::rng::{self, domain, standard_normal};
use crate::statistics::{pi_bic, pi_singleton_steps, PiStatistic};

/// Bound on `|ρ|` during fitting.
pub const RHO_MAX: f64 = 0.999;

/// Covariance parameters beyond the mean: ρ, σ_Z², v₀, v₁.
pub const COVARIANCE_PARAMS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSeriesModel {
    pub degree: usize,
    /// Raw monomial coefficients `β₀..β_k` in the index `j`.
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma_z2: f64,
    pub v0: f64,
    pub v1: f64,
    pub n: usize,
}

impl StarSeriesModel {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("series length must be positive".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain(format!("|ρ| = {} is not below 1", self.rho.abs())));
        }
        if !(self.sigma_z2 >= 0.0) || !self.sigma_z2.is_finite() {
            return Err(Error::Domain(format!("σ_Z² = {} is not a variance", self.sigma_z2)));
        }
        if !(self.v0.is_finite() || self.v0 == f64::NEG_INFINITY) || !self.v1.is_finite() {
            return Err(Error::Domain("v₀ and v₁ must be finite".into()));
        }
        if self.beta.len() != self.degree + 1 {
            return Err(Error::Domain(format!(
                "degree {} needs {} coefficients, got {}",
                self.degree,
                self.degree + 1,
                self.beta.len()
            )));
        }
        Ok(())
    }

    /// `E(Y_j)` for `j = 1..n`.
    pub fn mean(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let j = (i + 1) as f64;
            self.beta.iter().rev().fold(0.0, |acc, b| acc * j + b)
        })
    }

    fn measurement_var(&self, j: usize) -> f64 {
        (self.v0 + self.v1 * j as f64).exp()
    }
}

/// `Cov(Y_i, Y_j)` for `i, j = 1..n`.
pub fn build_covariance(model: &StarSeriesModel) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.n;
    let stationary = model.sigma_z2 / (1.0 - model.rho * model.rho);
    let mut cov = DMatrix::zeros(n, n);
    for a in 0..n {
        let i = a + 1;
        cov[(a, a)] = stationary + model.measurement_var(i) + model.measurement_var(i - 1);
        let mut ar = stationary;
        for b in a + 1..n {
            ar *= model.rho;
            let mut value = ar;
            if b == a + 1 {
                value -= model.measurement_var(i);
            }
            cov[(a, b)] = value;
            cov[(b, a)] = value;
        }
    }
    Ok(cov)
}

/// Multivariate normal log-density of `y` under `model`, by Cholesky
/// factorization of the dense covariance (with at most `1e−8` relative
/// diagonal jitter).
pub fn gaussian_loglik(y: &[f64], model: &StarSeriesModel) -> Result<f64> {
    if y.len() != model.n {
        return Err(Error::Usage(format!("{} observations for a length-{} model", y.len(), model.n)));
    }
    let cov = build_covariance(model)?;
    let scale = cov.diagonal().mean();
    let resid = DVector::from_column_slice(y) - model.mean();
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut c = cov.clone();
        for i in 0..model.n {
            c[(i, i)] += jitter * scale;
        }
        if let Some(chol) = c.cholesky() {
            let z = chol.l().solve_lower_triangular(&resid).expect("Cholesky factor is invertible");
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let n = model.n as f64;
            return Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()));
        }
    }
    Err(Error::Numeric("covariance is not positive definite after jitter".into()))
}

/// Kalman whitening at unit scale: innovations divided by their standard
/// deviations for `y` and every column of `x`, plus `Σ log F_j`.
struct Whitened {
    y: DVector<f64>,
    x: DMatrix<f64>,
    log_det: f64,
}

fn whiten(y: &[f64], x: &DMatrix<f64>, rho: f64, tau: f64, v1: f64) -> Option<Whitened> {
    let n = y.len();
    let m = x.ncols();
    let h = Vector3::new(1.0, 1.0, -1.0);
    let t = Matrix3::new(rho, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let mut p = Matrix3::from_diagonal(&Vector3::new(tau / (1.0 - rho * rho), v1.exp(), 1.0));
    // Columns 0..m hold the mean columns, column m the response.
    let mut state = DMatrix::<f64>::zeros(3, m + 1);
    let mut wy = DVector::zeros(n);
    let mut wx = DMatrix::zeros(n, m);
    let mut log_det = 0.0;
    let mut innov = vec![0.0; m + 1];
    for j in 0..n {
        let ph = p * h;
        let f = h.dot(&ph);
        if !(f > 0.0) || !f.is_finite() {
            return None;
        }
        log_det += f.ln();
        let sd = f.sqrt();
        for c in 0..=m {
            let obs = if c == m { y[j] } else { x[(j, c)] };
            let pred = state[(0, c)] + state[(1, c)] - state[(2, c)];
            innov[c] = obs - pred;
            if c == m {
                wy[j] = innov[c] / sd;
            } else {
                wx[(j, c)] = innov[c] / sd;
            }
        }
        let gain = ph / f;
        let p_upd = p - gain * ph.transpose();
        for (c, &v) in innov.iter().enumerate() {
            let updated = Vector3::new(state[(0, c)], state[(1, c)], state[(2, c)]) + gain * v;
            // Predict: I ← ρI, ε_new has mean 0, lagged ε ← current ε.
            state[(0, c)] = rho * updated[0];
            state[(1, c)] = 0.0;
            state[(2, c)] = updated[1];
        }
        p = t * p_upd * t.transpose();
        p[(0, 0)] += tau;
        p[(1, 1)] += (v1 * (j + 2) as f64).exp();
    }
    Some(Whitened { y: wy, x: wx, log_det })
}

/// Profile log-likelihood over β and `c = e^{v₀}` at `(ρ, τ = σ_Z²/c, v₁)`,
/// with the fitted β (in the columns of `x`) and `ĉ`.
fn profile(y: &[f64], x: &DMatrix<f64>, rho: f64, tau: f64, v1: f64) -> Option<(f64, DVector<f64>, f64)> {
    let w = whiten(y, x, rho, tau, v1)?;
    let n = y.len() as f64;
    let qr = w.x.clone().qr();
    let beta = qr.r().solve_upper_triangular(&qr.q().tr_mul(&w.y))?;
    let rss = (&w.y - &w.x * &beta).norm_squared();
    let c = rss / n;
    if !(c > 0.0) {
        return None;
    }
    let ll = -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + c.ln() + 1.0) - 0.5 * w.log_det;
    Some((ll, beta, c))
}

/// Log-likelihood at explicit covariance parameters, β profiled.
fn loglik_at(y: &[f64], x: &DMatrix<f64>, rho: f64, sigma_z2: f64, v0: f64, v1: f64) -> Option<f64> {
    let c = v0.exp();
    let w = whiten(y, x, rho, sigma_z2 / c, v1)?;
    let qr = w.x.clone().qr();
    let beta = qr.r().solve_upper_triangular(&qr.q().tr_mul(&w.y))?;
    let rss = (&w.y - &w.x * &beta).norm_squared();
    let n = y.len() as f64;
    Some(-0.5 * (n * (2.0 * std::f64::consts::PI * c).ln() + w.log_det + rss / c))
}

/// Mean columns: the constant and orthonormal polynomials in the index.
fn trend_basis(n: usize, degree: usize) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::from_element(n, degree + 1, 1.0);
    if degree > 0 {
        let legendre = legendre_design(degree, n)?;
        x.columns_mut(1, degree).copy_from(&legendre.values);
    }
    Ok(x)
}

/// Raw monomial coefficients reproducing `mu` at `j = 1..n`.
fn monomial_coefficients(mu: &DVector<f64>, degree: usize) -> Vec<f64> {
    let n = mu.len();
    let scale = n as f64;
    let v = DMatrix::from_fn(n, degree + 1, |i, k| ((i + 1) as f64 / scale).powi(k as i32));
    let svd = v.svd(true, true);
    let gamma = svd.solve(mu, 1e-14).unwrap_or_else(|_| DVector::zeros(degree + 1));
    (0..=degree).map(|k| gamma[k] / scale.powi(k as i32)).collect()
}

/// A fitted trend model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarFit {
    pub model: StarSeriesModel,
    pub max_loglik: f64,
    /// Set when the optimum has `σ_Z² = 0`.
    pub boundary: bool,
    pub evaluations: usize,
    /// Asymptotic standard errors of `(ρ, σ_Z², v₀, v₁)`, from the observed
    /// information; absent at the boundary or when the Hessian is singular.
    pub std_errors: Option<[f64; 4]>,
    /// Internal optimizer coordinates, reused as a warm start.
    #[serde(skip)]
    pub(crate) raw: [f64; 3],
}

/// Optimizer coordinates `(u, s, w)`: `ρ = 0.999 tanh u`, `τ = s²`, `v₁ = w/n`.
fn decode(p: &[f64], n: usize) -> (f64, f64, f64) {
    (RHO_MAX * p[0].tanh(), p[1] * p[1], p[2] / n as f64)
}

fn encode(rho: f64, tau: f64, v1: f64, n: usize) -> [f64; 3] {
    [(rho / RHO_MAX).atanh(), tau.sqrt(), v1 * n as f64]
}

const GRID_STARTS: usize = 3;
const MAX_EVALS: usize = 1500;
const FTOL: f64 = 1e-12;

fn fit_with_start(y: &[f64], degree: usize, warm: Option<[f64; 3]>) -> Result<StarFit> {
    let n = y.len();
    if n <= degree + 5 {
        return Err(Error::Validation(format!("degree {degree} needs n > {}, got {n}", degree + 5)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("series contains non-finite values".into()));
    }
    let x = trend_basis(n, degree)?;
    let objective = |p: &[f64]| {
        let (rho, tau, v1) = decode(p, n);
        profile(y, &x, rho, tau, v1).map_or(f64::INFINITY, |r| -r.0)
    };

    // Starting grid: ρ ∈ {−½, 0, ½}, τ ∈ {0, 1}, v₁ ∈ {0, −0.002}.
    let mut starts: Vec<([f64; 3], f64)> = Vec::new();
    for rho in [-0.5, 0.0, 0.5] {
        for tau in [0.0, 1.0] {
            for v1 in [0.0, -0.002] {
                let p = encode(rho, tau, v1, n);
                starts.push((p, objective(&p)));
            }
        }
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut candidates: Vec<[f64; 3]> = starts.iter().take(GRID_STARTS).map(|s| s.0).collect();
    if let Some(w) = warm {
        candidates.insert(0, w);
    }

    let mut evaluations = starts.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in candidates {
        let m = nelder_mead(objective, &start, &[0.3, 0.3, 0.5], FTOL, MAX_EVALS);
        evaluations += m.evaluations;
        if m.value.is_finite() && best.as_ref().map_or(true, |b| m.value < b.1) {
            best = Some((m.point, m.value));
        }
    }
    let (mut point, mut value) =
        best.ok_or_else(|| Error::Fit(format!("degree {degree}: every start failed")))?;

    // Polish on the σ_Z² = 0 face, where ρ drops out.
    let face = |p: &[f64]| objective(&[point[0], 0.0, p[0]]);
    let m = nelder_mead(face, &[point[2]], &[0.5], FTOL, 400);
    evaluations += m.evaluations;
    let boundary = m.value <= value + 1e-9;
    if boundary {
        point = vec![point[0], 0.0, m.point[0]];
        value = m.value;
    }

    let (rho, tau, v1) = decode(&point, n);
    let (ll, gamma, c) = profile(y, &x, rho, tau, v1)
        .ok_or_else(|| Error::Fit(format!("degree {degree}: optimum is not evaluable")))?;
    debug_assert!((ll + value).abs() < 1e-9 * ll.abs().max(1.0));
    let mu = &x * &gamma;
    let model = StarSeriesModel {
        degree,
        beta: monomial_coefficients(&mu, degree),
        rho,
        sigma_z2: tau * c,
        v0: c.ln(),
        v1,
        n,
    };
    let std_errors = if boundary { None } else { standard_errors(y, &x, &model) };
    Ok(StarFit {
        model,
        max_loglik: ll,
        boundary,
        evaluations,
        std_errors,
        raw: [point[0], point[1], point[2]],
    })
}

/// Observed-information standard errors of `(ρ, σ_Z², v₀, v₁)` from a
/// central-difference Hessian of the β-profiled log-likelihood.
fn standard_errors(y: &[f64], x: &DMatrix<f64>, model: &StarSeriesModel) -> Option<[f64; 4]> {
    let theta = [model.rho, model.sigma_z2, model.v0, model.v1];
    let steps = [1e-4, 1e-4 * model.sigma_z2.max(1e-2), 1e-4, 1e-4 / model.n as f64 * 10.0];
    let f = |t: &[f64; 4]| {
        if t[0].abs() >= 1.0 || t[1] < 0.0 {
            return None;
        }
        loglik_at(y, x, t[0], t[1], t[2], t[3])
    };
    let mut hess = DMatrix::zeros(4, 4);
    let f0 = f(&theta)?;
    for a in 0..4 {
        for b in a..4 {
            let at = |da: f64, db: f64| {
                let mut t = theta;
                t[a] += da * steps[a];
                t[b] += db * steps[b];
                f(&t)
            };
            let value = if a == b {
                (at(1.0, 0.0)? - 2.0 * f0 + at(-1.0, 0.0)?) / (steps[a] * steps[a])
            } else {
                (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?)
                    / (4.0 * steps[a] * steps[b])
            };
            hess[(a, b)] = value;
            hess[(b, a)] = value;
        }
    }
    let cov = (-hess).try_inverse()?;
    let mut se = [0.0; 4];
    for (i, s) in se.iter_mut().enumerate() {
        let v = cov[(i, i)];
        if !(v > 0.0) {
            return None;
        }
        *s = v.sqrt();
    }
    Some(se)
}

/// Maximum-likelihood fit of the degree-`k` trend model.
pub fn fit_star(y: &[f64], degree: usize) -> Result<StarFit> {
    fit_with_start(y, degree, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSelection {
    pub fits: Vec<StarFit>,
    /// `BIC_k = log L_k − ½ m_k log n` with `m_k = k + 1 + 4`.
    pub bic: Vec<f64>,
    pub bic_degree: usize,
    pub pi_bic: PiStatistic,
    pub pi_singleton: PiStatistic,
    pub family: FamilyFit,
}

/// Fits degrees `0..=max_degree` and evaluates the π statistics on the
/// degree ladder. Each degree starts from the previous optimum as well as
/// the grid, so the maximized log-likelihoods are nondecreasing.
pub fn select_trend(y: &[f64], max_degree: usize) -> Result<TrendSelection> {
    let n = y.len();
    if max_degree == 0 {
        return Err(Error::Validation("need max_degree ≥ 1".into()));
    }
    if n <= max_degree + 6 {
        return Err(Error::Validation(format!(
            "max degree {max_degree} needs n > {}, got {n}",
            max_degree + 6
        )));
    }
    let mut fits: Vec<StarFit> = Vec::with_capacity(max_degree + 1);
    for k in 0..=max_degree {
        let warm = fits.last().map(|f| f.raw);
        let fit = fit_with_start(y, k, warm).map_err(|e| e.in_model(k))?;
        fits.push(fit);
    }
    let dims: Vec<usize> = (0..=max_degree).map(|k| k + 1 + COVARIANCE_PARAMS).collect();
    let loglik: Vec<f64> = fits.iter().map(|f| f.max_loglik).collect();
    let family = FamilyFit::from_logliks(FamilyKind::Nested, n, dims, loglik)?;
    let bic_degree = family
        .bic
        .iter()
        .enumerate()
        .fold(0, |best, (k, &b)| if b > family.bic[best] { k } else { best });
    Ok(TrendSelection {
        bic: family.bic.clone(),
        bic_degree,
        pi_bic: pi_bic(&family),
        pi_singleton: pi_singleton_steps(&family)?,
        fits,
        family,
    })
}

/// Null series `Y*_j = ε*_j − ε*_{j−1}` with `Var ε*_j = exp(v₀ + v₁ j)`,
/// drawn from `rng`.
pub fn simulate_null_star_with(rng: &mut ChaCha8Rng, v0: f64, v1: f64, n: usize) -> Vec<f64> {
    let eps: Vec<f64> = (0..=n)
        .map(|j| (0.5 * (v0 + v1 * j as f64)).exp() * standard_normal(rng))
        .collect();
    eps.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Null series from stream 0 of `seed`.
pub fn simulate_null_star(v0: f64, v1: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Validation("null series needs n ≥ 2".into()));
    }
    let mut rng = rng::stream(seed, domain::STAR, 0);
    Ok(simulate_null_star_with(&mut rng, v0, v1, n))
}

/// One path of the full process under `model`.
pub fn simulate_star<R: Rng + ?Sized>(model: &StarSeriesModel, rng: &mut R) -> Vec<f64> {
    let n = model.n;
    let mean = model.mean();
    let sd_stationary = (model.sigma_z2 / (1.0 - model.rho * model.rho)).sqrt();
    let sd_z = model.sigma_z2.sqrt();
    let mut eps_prev = model.measurement_var(0).sqrt() * standard_normal(rng);
    let mut intrinsic = sd_stationary * standard_normal(rng);
    let mut out = Vec::with_capacity(n);
    for j in 1..=n {
        if j > 1 {
            intrinsic = model.rho * intrinsic + sd_z * standard_normal(rng);
        }
        let eps = model.measurement_var(j).sqrt() * standard_normal(rng);
        out.push(mean[j - 1] + intrinsic + eps - eps_prev);
        eps_prev = eps;
    }
    out
}

/// Parametric-bootstrap null distributions of `π_BIC` and `π_singleton`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarBootstrap {
    pub replicates: usize,
    pub seed: u64,
    /// Slope of the null generator's log-variance.
    pub v1: f64,
    pub p_pi_bic: f64,
    pub p_pi_singleton: f64,
    pub failures: usize,
    pub null_pi_bic: Vec<f64>,
    pub null_pi_singleton: Vec<f64>,
}

/// Bootstraps both π statistics of `selection` under the null generator
/// `Y*_j = ε*_j − ε*_{j−1}`, `Var ε*_j = exp(v̂₁ j)`, with `v̂₁` from the
/// BIC-selected fit. The mean and `v₀` are dropped since the likelihood
/// ratios do not depend on them.
pub fn star_bootstrap(selection: &TrendSelection, replicates: usize, seed: u64) -> Result<StarBootstrap> {
    let n = selection.family.n;
    let max_degree = selection.fits.len() - 1;
    let v1 = selection.fits[selection.bic_degree].model.v1;
    let spec = BootstrapSpec {
        generator: |_: usize, rng: &mut ChaCha8Rng| Ok(simulate_null_star_with(rng, 0.0, v1, n)),
        statistic: |y: &Vec<f64>| {
            let s = select_trend(y, max_degree)?;
            Ok(vec![s.pi_bic.value, s.pi_singleton.value])
        },
        tails: vec![Tail::Lower, Tail::Lower],
        replicates,
        seed,
    };
    let observed = [selection.pi_bic.value, selection.pi_singleton.value];
    let mut out = run_bootstrap(&spec, &observed)?;
    let null_pi_singleton = out.null_samples.pop().expect("two components");
    let null_pi_bic = out.null_samples.pop().expect("two components");
    Ok(StarBootstrap {
        replicates,
        seed,
        v1,
        p_pi_bic: out.p_values[0],
        p_pi_singleton: out.p_values[1],
        failures: out.failures.len(),
        null_pi_bic,
        null_pi_singleton,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(n: usize, rho: f64, sigma_z2: f64, v0: f64, v1: f64, beta: Vec<f64>) -> StarSeriesModel {
        StarSeriesModel {
            degree: beta.len() - 1,
            beta,
            rho,
            sigma_z2,
            v0,
            v1,
            n,
        }
    }

    #[test]
    fn pure_measurement_noise_is_ma1() {
        let cov = build_covariance(&model(6, 0.3, 0.0, 0.7, 0.0, vec![0.0])).unwrap();
        let e = 0.7f64.exp();
        for i in 0..6 {
            assert_relative_eq!(cov[(i, i)], 2.0 * e, epsilon = 1e-14);
            if i + 1 < 6 {
                assert_relative_eq!(cov[(i, i + 1)], -e, epsilon = 1e-14);
            }
            for j in i + 2..6 {
                assert_eq!(cov[(i, j)], 0.0);
            }
        }
        let white = build_covariance(&model(4, 0.0, 1.3, f64::NEG_INFINITY, 0.0, vec![0.0])).unwrap();
        assert_relative_eq!(white, DMatrix::identity(4, 4) * 1.3, epsilon = 1e-14);
    }

    #[test]
    fn invalid_parameters_are_domain_errors() {
        assert!(matches!(
            build_covariance(&model(4, 1.0, 1.0, 0.0, 0.0, vec![0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_covariance(&model(4, 0.2, -1.0, 0.0, 0.0, vec![0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn scalar_case_is_normal_density() {
        let m = model(1, 0.4, 0.5, -0.2, 0.1, vec![1.5]);
        let var = 0.5 / (1.0 - 0.16) + (-0.1f64).exp() + (-0.2f64).exp();
        let y = 2.1;
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (y - 1.5f64).powi(2) / var);
        assert_relative_eq!(gaussian_loglik(&[y], &m).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn dense_loglik_matches_explicit_inverse() {
        let m = model(5, -0.3, 0.8, 0.2, -0.05, vec![0.5, -0.1]);
        let y = [0.7, -0.4, 1.2, 0.1, -0.9];
        let cov = build_covariance(&m).unwrap();
        let r = DVector::from_column_slice(&y) - m.mean();
        let quad = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[(0, 0)];
        let expected = -0.5 * (5.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad);
        assert_relative_eq!(gaussian_loglik(&y, &m).unwrap(), expected, epsilon = 1e-8);

        let shifted: Vec<f64> = y.iter().map(|v| v + 3.0).collect();
        let mut m2 = m.clone();
        m2.beta[0] += 3.0;
        assert_relative_eq!(gaussian_loglik(&shifted, &m2).unwrap(), gaussian_loglik(&y, &m).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn kalman_profile_matches_dense_likelihood() {
        let truth = model(40, 0.6, 0.7, -0.3, -0.01, vec![1.0, 0.02]);
        let mut rng = rng::stream(4, domain::STAR, 9);
        let y = simulate_star(&truth, &mut rng);
        let x = trend_basis(40, 1).unwrap();
        let ll = loglik_at(&y, &x, 0.6, 0.7, -0.3, -0.01).unwrap();
        // Dense evaluation at the GLS β for the same covariance.
        let cov = build_covariance(&truth).unwrap();
        let ci = cov.clone().try_inverse().unwrap();
        let yv = DVector::from_column_slice(&y);
        let beta = (x.transpose() * &ci * &x).try_inverse().unwrap() * x.transpose() * &ci * &yv;
        let mu = &x * beta;
        let mut m = truth.clone();
        m.beta = monomial_coefficients(&mu, 1);
        assert_relative_eq!(ll, gaussian_loglik(&y, &m).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn zero_intrinsic_variance_equals_ma1_likelihood() {
        let m = model(8, 0.5, 0.0, 0.3, -0.02, vec![0.0]);
        let n = 8;
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) as f64;
            cov[(i, i)] = (0.3 - 0.02 * j).exp() + (0.3 - 0.02 * (j - 1.0)).exp();
            if i + 1 < n {
                cov[(i, i + 1)] = -(0.3 - 0.02 * j).exp();
                cov[(i + 1, i)] = cov[(i, i + 1)];
            }
        }
        let y = [0.3, -0.1, 0.4, -0.6, 0.2, 0.0, 0.5, -0.2];
        let r = DVector::from_column_slice(&y);
        let quad = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[(0, 0)];
        let expected = -0.5 * (8.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad);
        assert_relative_eq!(gaussian_loglik(&y, &m).unwrap(), expected, epsilon = 1e-8);
    }

    #[test]
    fn degree_zero_beta_is_gls_mean() {
        let y = simulate_null_star(0.0, 0.0, 30, 12).unwrap();
        let fit = fit_star(&y, 0).unwrap();
        let cov = build_covariance(&fit.model).unwrap();
        let ci = cov.try_inverse().unwrap();
        let ones = DVector::from_element(30, 1.0);
        let yv = DVector::from_column_slice(&y);
        let gls = (ones.transpose() * &ci * &yv)[(0, 0)] / (ones.transpose() * &ci * &ones)[(0, 0)];
        assert_relative_eq!(fit.model.beta[0], gls, epsilon = 1e-8);
        assert_relative_eq!(fit.max_loglik, gaussian_loglik(&y, &fit.model).unwrap(), epsilon = 1e-7);
    }

    #[test]
    fn bootstrap_under_its_own_null() {
        let y = simulate_null_star(0.0, -0.001816, 76, 8).unwrap();
        let sel = select_trend(&y, 3).unwrap();
        let boot = star_bootstrap(&sel, 100, 2).unwrap();
        assert_eq!(boot.null_pi_bic.len() + boot.failures, 100);
        assert!(boot.p_pi_bic > 0.0 && boot.p_pi_bic <= 1.0);
        assert_eq!(boot, star_bootstrap(&sel, 100, 2).unwrap());
    }

    #[test]
    fn null_series_is_ma1() {
        let y = simulate_null_star(0.0, 0.0, 10_000, 3).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let c0: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = y.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!((c1 / c0 + 0.5).abs() < 0.03, "lag-1 autocorrelation {}", c1 / c0);
        assert_eq!(simulate_null_star(0.0, -0.001816, 76, 1).unwrap().len(), 76);
    }

    #[test]
    fn ladder_is_monotone_and_deterministic() {
        let y = simulate_null_star(0.0, -0.001816, 76, 21).unwrap();
        let sel = select_trend(&y, 5).unwrap();
        for w in sel.family.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert_eq!(sel, select_trend(&y, 5).unwrap());
        assert!(sel.pi_bic.value > 0.0 && sel.pi_bic.value <= 1.0);
        assert!(select_trend(&y[..10], 5).is_err());
    }
}
