//! Test statistics and decision rules.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::alternatives::{FamilyFit, FamilyKind};
use crate::basis::OrthonormalSystem;
use crate::error::{Error, Result};
use crate::glm::{Dataset, ExponentialFamily, FittedModel};

/// Exponents above this are clamped and flagged.
pub const EXP_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestName {
    /// ℒ at the AIC-selected order.
    #[serde(rename = "L_a")]
    La,
    /// ℒ at the BIC-selected order.
    #[serde(rename = "L_b")]
    Lb,
    /// π_BIC over the nested ladder.
    #[serde(rename = "B_N")]
    Bn,
    /// π_BIC over singletons.
    #[serde(rename = "B_S")]
    Bs,
    #[serde(rename = "M_S")]
    Ms,
    /// Adaptive Neyman.
    #[serde(rename = "N_A")]
    Na,
    #[serde(rename = "S_n")]
    Sn,
    #[serde(rename = "R_n")]
    Rn,
    #[serde(rename = "pi_singleton")]
    PiSingleton,
}

impl TestName {
    pub const ALL: [TestName; 9] = [
        Self::La,
        Self::Lb,
        Self::Bn,
        Self::Bs,
        Self::Ms,
        Self::Na,
        Self::Sn,
        Self::Rn,
        Self::PiSingleton,
    ];

    /// The six omnibus tests of the simulation study, in table order.
    pub const STUDY: [TestName; 6] = [Self::La, Self::Lb, Self::Bn, Self::Bs, Self::Ms, Self::Na];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::La => "L_a",
            Self::Lb => "L_b",
            Self::Bn => "B_N",
            Self::Bs => "B_S",
            Self::Ms => "M_S",
            Self::Na => "N_A",
            Self::Sn => "S_n",
            Self::Rn => "R_n",
            Self::PiSingleton => "pi_singleton",
        }
    }

    /// π-type statistics reject when small; everything else when large.
    pub fn rejects_small(self) -> bool {
        matches!(self, Self::Bn | Self::Bs | Self::PiSingleton)
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', '-'], "");
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().to_ascii_lowercase().replace('_', "") == key)
            .ok_or_else(|| Error::Usage(format!("unknown test `{s}`")))
    }
}

/// A π-type statistic with its large-value form `n^{m̃/2}(1 − π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiStatistic {
    pub value: f64,
    /// `n^{m̃/2}(1 − π)` with `m̃` the smallest `m_j − m₀`.
    pub large_value: f64,
    /// `log((1 − π)/π)`.
    pub log_odds: f64,
    /// Set when the log-odds exceeded the exponent cap; `value` is then 0.
    pub saturated: bool,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn pi_from_log_odds(log_odds: f64, scale: f64) -> PiStatistic {
    let saturated = log_odds > EXP_CAP;
    // π = 1/(1 + e^L) and 1 − π = 1/(1 + e^{−L}).
    let value = if saturated { 0.0 } else { 1.0 / (1.0 + log_odds.exp()) };
    let complement = 1.0 / (1.0 + (-log_odds).exp());
    PiStatistic {
        value,
        large_value: scale * complement,
        log_odds,
        saturated,
    }
}

/// `π_BIC = {1 + Σ_j n^{−(m_j − m₀)/2} exp(ℒ_j/2)}^{−1}`.
pub fn pi_bic(fit: &FamilyFit) -> PiStatistic {
    let log_n = (fit.n as f64).ln();
    let extra = fit.extra_dims();
    let log_odds = log_sum_exp(
        fit.lr
            .iter()
            .zip(&extra)
            .map(|(l, &d)| 0.5 * l - 0.5 * d as f64 * log_n),
    );
    let m_tilde = extra.iter().copied().min().unwrap_or(1);
    pi_from_log_odds(log_odds, (0.5 * m_tilde as f64 * log_n).exp())
}

/// `{1 + Σ_j exp[(ℒ_j − ℒ_{j−1})/2 − log(n)/2]}^{−1}` on a nested ladder.
pub fn pi_singleton_steps(fit: &FamilyFit) -> Result<PiStatistic> {
    if fit.kind != FamilyKind::Nested {
        return Err(Error::Usage("stepwise π needs a nested family".into()));
    }
    let half_log_n = 0.5 * (fit.n as f64).ln();
    let log_odds = log_sum_exp((0..fit.k()).map(|j| {
        let prev = if j == 0 { 0.0 } else { fit.lr[j - 1] };
        0.5 * (fit.lr[j] - prev) - half_log_n
    }));
    Ok(pi_from_log_odds(log_odds, half_log_n.exp()))
}

/// `α̂_1..α̂_K` with the null dispersion `a(η̂₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub alpha_hat: DVector<f64>,
    pub dispersion: f64,
    pub n: usize,
}

impl ScoreVector {
    pub fn new(alpha_hat: DVector<f64>, dispersion: f64, n: usize) -> Result<Self> {
        if alpha_hat.is_empty() {
            return Err(Error::Validation("score vector needs K ≥ 1".into()));
        }
        if alpha_hat.iter().any(|a| !a.is_finite()) || !(dispersion > 0.0) {
            return Err(Error::Validation("score vector entries must be finite".into()));
        }
        Ok(Self {
            alpha_hat,
            dispersion,
            n,
        })
    }

    /// `nα̂_j²/a(η̂₀)` for each direction.
    pub fn standardized(&self) -> impl Iterator<Item = f64> + '_ {
        let scale = self.n as f64 / self.dispersion;
        self.alpha_hat.iter().map(move |a| scale * a * a)
    }
}

/// `α̂_j = (1/n) Σ_i [Y_i − b′(g(x_i; θ̂₀))] v̂_j(x_i)`.
pub fn score_vector(
    family: &dyn ExponentialFamily,
    data: &Dataset,
    null_fit: &FittedModel,
    system: &OrthonormalSystem,
) -> Result<ScoreVector> {
    let n = data.n();
    if system.n() != n || null_fit.linear_predictor.len() != n {
        return Err(Error::Usage(format!(
            "system has {} rows, fit {} and data {n}",
            system.n(),
            null_fit.linear_predictor.len()
        )));
    }
    let resid = null_fit.residuals(family, data);
    let alpha = system.values.tr_mul(&resid) / n as f64;
    ScoreVector::new(alpha, null_fit.dispersion, n)
}

/// A sum of capped exponentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CappedSum {
    pub value: f64,
    pub saturated: bool,
}

/// `S_n = Σ_j exp(nα̂_j²/(2a(η̂₀)))`.
pub fn s_n(score: &ScoreVector) -> CappedSum {
    let mut saturated = false;
    let value = score
        .standardized()
        .map(|v| {
            let e = 0.5 * v;
            if e > EXP_CAP {
                saturated = true;
            }
            e.min(EXP_CAP).exp()
        })
        .sum();
    CappedSum { value, saturated }
}

/// `R_n = max_j nα̂_j²/a(η̂₀)`.
pub fn r_n(score: &ScoreVector) -> f64 {
    score.standardized().fold(f64::NEG_INFINITY, f64::max)
}

fn max_centering(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Domain(format!("max test needs K ≥ 2, got {k}")));
    }
    let log_k = (k as f64).ln();
    Ok(-2.0 * log_k + log_k.ln() + PI.ln())
}

/// `M_S = max_{0≤j≤K} ℒ_j − 2 log K + log log K + log π`, with `ℒ_0 = 0`.
pub fn max_test_ms(fit: &FamilyFit, k: usize) -> Result<f64> {
    let max = fit.lr.iter().cloned().fold(0.0, f64::max);
    Ok(max + max_centering(k)?)
}

/// `R_n − 2 log K + log log K + log π`, comparable with `M_S`.
pub fn centered_r_n(score: &ScoreVector) -> Result<f64> {
    Ok(r_n(score) + max_centering(score.alpha_hat.len())?)
}

/// Orthonormal real DFT of `r`, excluding the mean: `cos_1, sin_1,
/// cos_2, …`, plus the alternating term when `n` is even. Returns `n − 1`
/// coefficients whose squares sum to `Σ r_i² − n r̄²`.
pub fn fourier_coefficients(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let scale = (2.0 / n as f64).sqrt();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..=(n - 1) / 2 {
        let (mut c, mut s) = (0.0, 0.0);
        for (i, &ri) in r.iter().enumerate() {
            let m = (k * i) % n;
            c += ri * cos[m];
            s += ri * sin[m];
        }
        out.push(scale * c);
        out.push(scale * s);
    }
    if n % 2 == 0 {
        let alt: f64 = r.iter().enumerate().map(|(i, &ri)| if i % 2 == 0 { ri } else { -ri }).sum();
        out.push(alt / (n as f64).sqrt());
    }
    out
}

/// Adaptive Neyman statistic from standardized coefficients `z`, with the
/// double-log normalization for sample size `n`.
pub fn adaptive_neyman_from_z(z: &[f64], n: usize) -> f64 {
    let mut partial = 0.0;
    let mut best = f64::NEG_INFINITY;
    for (m, zi) in z.iter().enumerate() {
        partial += zi * zi - 1.0;
        best = best.max(partial / (2.0 * (m + 1) as f64).sqrt());
    }
    let ll = (n as f64).ln().ln();
    (2.0 * ll).sqrt() * best - (2.0 * ll + 0.5 * ll.ln() - 0.5 * (4.0 * PI).ln())
}

/// Adaptive Neyman statistic of null-fit residuals, standardized by the
/// residual variance MLE `Σ r_i²/n`.
pub fn adaptive_neyman(residuals: &[f64]) -> Result<f64> {
    let n = residuals.len();
    if n < 8 {
        return Err(Error::Validation(format!("adaptive Neyman needs n ≥ 8, got {n}")));
    }
    let var = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate("residual variance is zero".into()));
    }
    let sd = var.sqrt();
    let z: Vec<f64> = fourier_coefficients(residuals).iter().map(|c| c / sd).collect();
    Ok(adaptive_neyman_from_z(&z, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    Asymptotic,
    Simulated,
    Bootstrap,
}

/// What a statistic is compared against. For critical-value references
/// `value` is on the statistic's own scale (a π-threshold for π-type
/// tests); for bootstrap references it is a p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub test: TestName,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub source: ReferenceSource,
    pub value: f64,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: TestName,
    pub value: f64,
    pub reference_kind: ReferenceSource,
    pub reference_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub seed_provenance: Option<String>,
    pub lindley_safe: bool,
}

/// Applies the rejection rule. π-type statistics reject when
/// `π ≤ threshold` (capped at ½ when `lindley_safe`); the rest reject when
/// the value reaches the critical value. Bootstrap references reject when
/// the p-value is at most `alpha`.
pub fn decide(
    test: TestName,
    k: Option<usize>,
    n: Option<usize>,
    value: f64,
    reference: &Reference,
    alpha: f64,
    lindley_safe: bool,
) -> Result<TestResult> {
    let mismatch = |a: Option<usize>, b: Option<usize>| matches!((a, b), (Some(x), Some(y)) if x != y);
    if reference.test != test || mismatch(k, reference.k) || mismatch(n, reference.n) {
        return Err(Error::Usage(format!(
            "reference for {} (K={:?}, n={:?}) used for {test} (K={k:?}, n={n:?})",
            reference.test, reference.k, reference.n
        )));
    }
    let reject = match reference.source {
        ReferenceSource::Bootstrap => reference.value <= alpha,
        _ if test.rejects_small() => {
            let threshold = if lindley_safe {
                reference.value.min(0.5)
            } else {
                reference.value
            };
            value <= threshold
        }
        _ => value >= reference.value,
    };
    Ok(TestResult {
        statistic: test,
        value,
        reference_kind: reference.source,
        reference_value: reference.value,
        alpha,
        reject,
        seed_provenance: reference.provenance.clone(),
        lindley_safe,
    })
}
