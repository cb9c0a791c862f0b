//! Exponential-family likelihoods and maximum-likelihood fitting.
//!
//! Everything here uses the canonical link: the linear predictor `g(x)` is
//! the natural parameter, so the log-likelihood of one observation is
//! `[y g − b(g)] / a(η) + c(y, η)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim;

/// Cumulant function `b`, its derivatives, and the dispersion pieces
/// `a(η)`, `c(y, η)` of a canonical exponential family.
pub trait ExponentialFamily: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// `b(t)`.
    fn cumulant(&self, t: f64) -> f64;
    /// `b′(t)`, the mean.
    fn cumulant_d1(&self, t: f64) -> f64;
    /// `b″(t)`, the variance function on the natural scale.
    fn cumulant_d2(&self, t: f64) -> f64;
    fn cumulant_d3(&self, t: f64) -> f64;

    /// `a(η)`.
    fn dispersion(&self, eta: f64) -> f64;
    /// `c(y, η)`.
    fn base_measure(&self, y: f64, eta: f64) -> f64;

    /// Inverse of `b′`.
    fn canonical_link(&self, mu: f64) -> f64;

    /// Whether `η` is a free parameter of the family.
    fn has_dispersion(&self) -> bool;

    /// `b″` is constant, so IRLS converges in a single weighted solve.
    fn constant_variance(&self) -> bool {
        false
    }

    fn admits_predictor(&self, t: f64) -> bool {
        t.is_finite()
    }

    fn admits_response(&self, y: f64) -> bool {
        y.is_finite()
    }

    /// One response drawn at natural parameter `t` and dispersion `η`.
    fn sample(&self, t: f64, eta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let _ = (t, eta, rng);
        Err(Error::Usage(format!("family {} has no sampler", self.name())))
    }

    /// Starting mean for IRLS, inside the open mean range.
    fn initial_mean(&self, y: f64, mean_y: f64) -> f64;

    /// Maximizer of the log-likelihood over `η` at fixed predictor.
    ///
    /// The default searches `log η` numerically; families with a closed form
    /// override it.
    fn dispersion_mle(&self, y: &[f64], predictor: &[f64]) -> Result<f64> {
        let objective = |log_eta: f64| {
            let eta = log_eta.exp();
            let a = self.dispersion(eta);
            y.iter()
                .zip(predictor)
                .map(|(&yi, &t)| (yi * t - self.cumulant(t)) / a + self.base_measure(yi, eta))
                .sum::<f64>()
        };
        let log_eta = optim::golden_section_max(objective, -30.0, 30.0, 1e-12, 500);
        Ok(log_eta.exp())
    }
}

/// Normal responses: `b(t) = t²/2`, `a(η) = η` (the variance).
#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl ExponentialFamily for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn cumulant(&self, t: f64) -> f64 {
        0.5 * t * t
    }
    fn cumulant_d1(&self, t: f64) -> f64 {
        t
    }
    fn cumulant_d2(&self, _t: f64) -> f64 {
        1.0
    }
    fn cumulant_d3(&self, _t: f64) -> f64 {
        0.0
    }
    fn dispersion(&self, eta: f64) -> f64 {
        eta
    }
    fn base_measure(&self, y: f64, eta: f64) -> f64 {
        -y * y / (2.0 * eta) - 0.5 * (2.0 * PI * eta).ln()
    }
    fn canonical_link(&self, mu: f64) -> f64 {
        mu
    }
    fn has_dispersion(&self) -> bool {
        true
    }
    fn sample(&self, t: f64, eta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(t + eta.sqrt() * crate::rng::standard_normal(rng))
    }
    fn constant_variance(&self) -> bool {
        true
    }
    fn initial_mean(&self, y: f64, _mean_y: f64) -> f64 {
        y
    }
    fn dispersion_mle(&self, y: &[f64], predictor: &[f64]) -> Result<f64> {
        let rss: f64 = y.iter().zip(predictor).map(|(a, b)| (a - b).powi(2)).sum();
        let eta = rss / y.len() as f64;
        if eta > 0.0 {
            Ok(eta)
        } else {
            Err(Error::Degenerate(
                "zero residual sum of squares: Gaussian variance MLE is 0".into(),
            ))
        }
    }
}

/// Counts with the log link: `b(t) = eᵗ`, `a ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Poisson;

impl ExponentialFamily for Poisson {
    fn name(&self) -> &str {
        "poisson"
    }
    fn cumulant(&self, t: f64) -> f64 {
        t.exp()
    }
    fn cumulant_d1(&self, t: f64) -> f64 {
        t.exp()
    }
    fn cumulant_d2(&self, t: f64) -> f64 {
        t.exp()
    }
    fn cumulant_d3(&self, t: f64) -> f64 {
        t.exp()
    }
    fn dispersion(&self, _eta: f64) -> f64 {
        1.0
    }
    fn base_measure(&self, y: f64, _eta: f64) -> f64 {
        -ln_gamma(y + 1.0)
    }
    fn canonical_link(&self, mu: f64) -> f64 {
        mu.ln()
    }
    fn has_dispersion(&self) -> bool {
        false
    }
    fn sample(&self, t: f64, _eta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let d = rand_distr::Poisson::new(t.exp()).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(d.sample(rng))
    }
    fn admits_predictor(&self, t: f64) -> bool {
        t.is_finite() && t < 700.0
    }
    fn admits_response(&self, y: f64) -> bool {
        y.is_finite() && y >= 0.0
    }
    fn initial_mean(&self, y: f64, mean_y: f64) -> f64 {
        0.5 * (y + mean_y.max(0.1))
    }
}

/// Binary responses with the logit link: `b(t) = log(1 + eᵗ)`, `a ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bernoulli;

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl ExponentialFamily for Bernoulli {
    fn name(&self) -> &str {
        "bernoulli"
    }
    fn cumulant(&self, t: f64) -> f64 {
        // log(1 + e^t) without overflow
        t.max(0.0) + (-t.abs()).exp().ln_1p()
    }
    fn cumulant_d1(&self, t: f64) -> f64 {
        logistic(t)
    }
    fn cumulant_d2(&self, t: f64) -> f64 {
        let p = logistic(t);
        p * (1.0 - p)
    }
    fn cumulant_d3(&self, t: f64) -> f64 {
        let p = logistic(t);
        p * (1.0 - p) * (1.0 - 2.0 * p)
    }
    fn dispersion(&self, _eta: f64) -> f64 {
        1.0
    }
    fn base_measure(&self, _y: f64, _eta: f64) -> f64 {
        0.0
    }
    fn canonical_link(&self, mu: f64) -> f64 {
        (mu / (1.0 - mu)).ln()
    }
    fn has_dispersion(&self) -> bool {
        false
    }
    fn sample(&self, t: f64, _eta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let p = 1.0 / (1.0 + (-t).exp());
        Ok(if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
    }
    fn admits_response(&self, y: f64) -> bool {
        (0.0..=1.0).contains(&y)
    }
    fn initial_mean(&self, y: f64, _mean_y: f64) -> f64 {
        (y + 0.5) / 2.0
    }
}

/// Looks up a shipped family by name.
pub fn family_by_name(name: &str) -> Result<Box<dyn ExponentialFamily>> {
    match name.to_ascii_lowercase().as_str() {
        "gaussian" | "normal" => Ok(Box::new(Gaussian)),
        "poisson" => Ok(Box::new(Poisson)),
        "bernoulli" | "binomial" | "logistic" => Ok(Box::new(Bernoulli)),
        other => Err(Error::Usage(format!("unknown family `{other}`"))),
    }
}

/// Observed covariates (one row per observation) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Validation("dataset has no observations".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Validation(format!(
                "design has {} rows but there are {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::ObservationDomain {
                index: i,
                reason: "response is not finite".into(),
            });
        }
        if let Some(i) = (0..x.nrows()).find(|&i| x.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::ObservationDomain {
                index: i,
                reason: "covariate is not finite".into(),
            });
        }
        Ok(Self { x, y })
    }

    /// A dataset with one scalar covariate.
    pub fn scalar(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(DMatrix::from_vec(n, 1, x), DVector::from_vec(y))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// The first covariate column.
    pub fn covariate(&self) -> Vec<f64> {
        self.x.column(0).iter().copied().collect()
    }

    /// Reads a CSV with a header naming covariates `x1..xd` and response `y`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::Validation("CSV header has no `y` column".into()))?;
        let mut x_cols = Vec::new();
        for d in 1.. {
            match headers.iter().position(|h| h == format!("x{d}")) {
                Some(c) => x_cols.push(c),
                None => break,
            }
        }
        if x_cols.is_empty() {
            return Err(Error::Validation("CSV header has no `x1` column".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                record[c].parse::<f64>().map_err(|e| Error::ObservationDomain {
                    index: row,
                    reason: format!("column `{}`: {e}", &headers[c]),
                })
            };
            ys.push(parse(y_col)?);
            for &c in &x_cols {
                xs.push(parse(c)?);
            }
        }
        let n = ys.len();
        let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
        Self::new(x, DVector::from_vec(ys))
    }
}

/// Evaluations of the null-model functions `γ_1..γ_p` on the design.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpec {
    gamma: DMatrix<f64>,
}

impl NullSpec {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.ncols() == 0 {
            return Err(Error::Validation("null model needs at least one function".into()));
        }
        check_full_rank(&gamma, "null basis")?;
        Ok(Self { gamma })
    }

    /// The constant-mean null `g(x) = θ`.
    pub fn intercept(n: usize) -> Self {
        Self {
            gamma: DMatrix::from_element(n, 1, 1.0),
        }
    }

    /// Polynomial null `θ_0 + θ_1 x + … + θ_d x^d` in the first covariate.
    pub fn polynomial(design: &[f64], degree: usize) -> Result<Self> {
        let n = design.len();
        Self::new(DMatrix::from_fn(n, degree + 1, |i, j| design[i].powi(j as i32)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn p(&self) -> usize {
        self.gamma.ncols()
    }
}

/// Whether the dispersion parameter is estimated or held at a given `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DispersionMode {
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsConfig {
    pub max_iterations: usize,
    /// Relative deviance change that ends the iteration.
    pub tolerance: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

/// A maximum-likelihood fit of one mean model.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub coefficients: DVector<f64>,
    /// The fitted (or fixed) `η`.
    pub dispersion_param: f64,
    /// `a(η̂)`.
    pub dispersion: f64,
    pub max_loglik: f64,
    /// Mean parameters, plus one when the dispersion was estimated.
    pub dimension: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `g(x_i; θ̂)` at every observation.
    pub linear_predictor: DVector<f64>,
}

impl FittedModel {
    /// Response residuals `Y_i − b′(g(x_i; θ̂))`.
    pub fn residuals(&self, family: &dyn ExponentialFamily, data: &Dataset) -> DVector<f64> {
        DVector::from_iterator(
            data.n(),
            data.y
                .iter()
                .zip(self.linear_predictor.iter())
                .map(|(&y, &t)| y - family.cumulant_d1(t)),
        )
    }
}

/// `Σ_i {[Y_i g_i − b(g_i)] / a(η) + c(Y_i, η)}`.
pub fn log_likelihood(
    family: &dyn ExponentialFamily,
    linear_predictor: &[f64],
    eta: f64,
    data: &Dataset,
) -> Result<f64> {
    if linear_predictor.len() != data.n() {
        return Err(Error::Usage(format!(
            "{} predictor values for {} observations",
            linear_predictor.len(),
            data.n()
        )));
    }
    let a = family.dispersion(eta);
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("dispersion a(η) = {a} is not positive")));
    }
    let mut total = 0.0;
    for (i, (&y, &t)) in data.y.iter().zip(linear_predictor).enumerate() {
        if !family.admits_predictor(t) {
            return Err(Error::ObservationDomain {
                index: i,
                reason: format!("predictor {t} outside the {} cumulant domain", family.name()),
            });
        }
        if !family.admits_response(y) {
            return Err(Error::ObservationDomain {
                index: i,
                reason: format!("response {y} outside the {} support", family.name()),
            });
        }
        let term = (y * t - family.cumulant(t)) / a + family.base_measure(y, eta);
        if !term.is_finite() {
            return Err(Error::ObservationDomain {
                index: i,
                reason: format!("log-likelihood term is {term}"),
            });
        }
        total += term;
    }
    Ok(total)
}

const RANK_TOL: f64 = 1e-10;

/// Fails with the first column whose component orthogonal to the earlier
/// columns is negligible relative to its own norm.
pub(crate) fn check_full_rank(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.ncols() > m.nrows() {
        return Err(Error::RankDeficient {
            matrix: what,
            column: m.nrows(),
        });
    }
    let r = m.clone().qr().r();
    for j in 0..m.ncols() {
        let norm = m.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(Error::RankDeficient { matrix: what, column: j });
        }
    }
    Ok(())
}

/// Weighted least squares `min Σ w_i (z_i − x_iᵀβ)²` through a QR factor.
fn weighted_solve(x: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let mut xw = x.clone();
    let mut zw = DVector::zeros(n);
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..p {
            xw[(i, j)] *= s;
        }
        zw[i] = z[i] * s;
    }
    let qr = xw.qr();
    let qtz = qr.q().tr_mul(&zw);
    qr.r()
        .solve_upper_triangular(&qtz)
        .ok_or_else(|| Error::Numeric("singular weighted design".into()))
}

fn kernel(family: &dyn ExponentialFamily, y: &DVector<f64>, t: &DVector<f64>) -> f64 {
    y.iter().zip(t.iter()).map(|(&yi, &ti)| yi * ti - family.cumulant(ti)).sum()
}

/// Maximum-likelihood fit by IRLS with the default convergence settings.
pub fn fit_mle(
    family: &dyn ExponentialFamily,
    basis: &DMatrix<f64>,
    data: &Dataset,
    dispersion: DispersionMode,
) -> Result<FittedModel> {
    fit_mle_with(family, basis, data, dispersion, &IrlsConfig::default())
}

pub fn fit_mle_with(
    family: &dyn ExponentialFamily,
    basis: &DMatrix<f64>,
    data: &Dataset,
    dispersion: DispersionMode,
    config: &IrlsConfig,
) -> Result<FittedModel> {
    let n = data.n();
    if basis.nrows() != n {
        return Err(Error::Usage(format!(
            "basis has {} rows for {} observations",
            basis.nrows(),
            n
        )));
    }
    check_full_rank(basis, "mean-model basis")?;
    if let Some(i) = data.y.iter().position(|&y| !family.admits_response(y)) {
        return Err(Error::ObservationDomain {
            index: i,
            reason: format!("response {} outside the {} support", data.y[i], family.name()),
        });
    }

    let y = &data.y;
    let mean_y = y.mean();
    let mut t = DVector::from_iterator(
        n,
        y.iter().map(|&yi| family.canonical_link(family.initial_mean(yi, mean_y))),
    );
    let mut coefficients = DVector::zeros(basis.ncols());
    let mut deviance = -2.0 * kernel(family, y, &t);
    let mut iterations = 0;
    let mut converged = false;
    let mut first = true;

    while iterations < config.max_iterations {
        iterations += 1;
        let w: Vec<f64> = t.iter().map(|&ti| family.cumulant_d2(ti).max(1e-300)).collect();
        let z: Vec<f64> = (0..n)
            .map(|i| t[i] + (y[i] - family.cumulant_d1(t[i])) / w[i])
            .collect();
        let beta = weighted_solve(basis, &w, &z)?;
        let mut t_new = basis * &beta;
        let mut dev_new = -2.0 * kernel(family, y, &t_new);

        // Step halving whenever the full step lowers the likelihood.
        let mut step = 1.0;
        let mut candidate = beta.clone();
        if !first {
            while !(dev_new.is_finite() && dev_new <= deviance + 1e-12 * deviance.abs())
                && step > 1e-9
            {
                step *= 0.5;
                candidate = &coefficients + (&beta - &coefficients) * step;
                t_new = basis * &candidate;
                dev_new = -2.0 * kernel(family, y, &t_new);
            }
        }
        coefficients = candidate;

        let change = (dev_new - deviance).abs() / (dev_new.abs() + 0.1);
        t = t_new;
        deviance = dev_new;
        if family.constant_variance() || (!first && change < config.tolerance) {
            converged = true;
            break;
        }
        first = false;
    }

    // Vanishing weights mean the likelihood keeps rising toward a boundary
    // (separation, all-zero counts): there is no finite maximizer.
    if converged
        && !family.constant_variance()
        && t.iter().any(|&ti| family.cumulant_d2(ti) < 1e-10)
    {
        converged = false;
    }
    if !converged {
        return Err(Error::Convergence {
            iterations,
            deviance,
        });
    }

    let t_slice = t.as_slice();
    let (eta, estimated) = match dispersion {
        DispersionMode::Fixed(eta) => (eta, false),
        DispersionMode::Estimate if family.has_dispersion() => {
            (family.dispersion_mle(y.as_slice(), t_slice)?, true)
        }
        DispersionMode::Estimate => (1.0, false),
    };
    let max_loglik = log_likelihood(family, t_slice, eta, data)?;
    Ok(FittedModel {
        dimension: basis.ncols() + usize::from(estimated),
        coefficients,
        dispersion_param: eta,
        dispersion: family.dispersion(eta),
        max_loglik,
        converged,
        iterations,
        linear_predictor: t,
    })
}

/// `ℒ_j = 2 (ℓ_alt − ℓ_null)`.
pub fn likelihood_ratio(null_fit: &FittedModel, alt_fit: &FittedModel) -> Result<f64> {
    let value = 2.0 * (alt_fit.max_loglik - null_fit.max_loglik);
    if value < -1e-6 {
        return Err(Error::NestingViolation { value });
    }
    Ok(value)
}
