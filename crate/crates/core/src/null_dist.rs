//! Simulated and closed-form null laws, critical values and the
//! stable-limit constants.
//!
//! Every simulated law is a functional of i.i.d. χ²₁ draws `V_j` (or, for
//! the adaptive Neyman law, of standard normals), generated from counter
//! based streams in fixed blocks so samples are reproducible bit for bit
//! and independent of the worker count.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::cache::{CacheRow, CriticalValueCache};
use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::rng::{self, domain, standard_normal};
use crate::statistics::{adaptive_neyman_from_z, Reference, ReferenceSource, TestName};

/// Smallest replicate count accepted by [`simulate_law`].
pub const MIN_REPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitLaw {
    /// `S/(1 + S/√n)` with `S = Σ_{j≤K} exp(V_j/2)`.
    SingletonBic { k: usize, n: usize },
    /// `Σ_j n^{(1−j)/2} e^{W_j/2} / (1 + Σ_j n^{−j/2} e^{W_j/2})`, `W_j = V_1+…+V_j`.
    NestedBic { k: usize, n: usize },
    /// `Σ_{j≤count} exp(V_j/2)` with `V_j ~ χ²_df`.
    ExpChiSum { count: usize, df: usize },
    /// `W_r̃` with `r̃ = argmax_{1≤r≤K} (W_r − 2r)`.
    OrderSelAic { k: usize },
    /// `W_r̃` with `r̃ = argmax_{1≤r≤K} (W_r − r log n)`.
    OrderSelBic { k: usize, n: usize },
    /// CDF `exp(−exp(−x/2))`.
    GumbelHalf,
    /// Totally skewed stable law `S₁(1, 1, 0)`.
    StableS1,
    /// `1/(1 + n^{−1/2} Σ_{j≤K} exp(V_j/2))`.
    Lindley { k: usize, n: usize },
    /// Adaptive Neyman statistic of `n − 1` i.i.d. normal Fourier
    /// coefficients standardized by their variance MLE.
    AdaptiveNeyman { n: usize },
    /// `Σ_{j≤K} exp(V_j/2)`, the fixed-K null law of `S_n`.
    ScoreSum { k: usize },
    /// `max_{j≤K} V_j`, the fixed-K null law of `R_n`.
    ScoreMax { k: usize },
}

impl LimitLaw {
    /// File stem used by the critical-value cache.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::SingletonBic { .. } => "singleton_bic",
            Self::NestedBic { .. } => "nested_bic",
            Self::ExpChiSum { .. } => "exp_chi_sum",
            Self::OrderSelAic { .. } => "order_sel_aic",
            Self::OrderSelBic { .. } => "order_sel_bic",
            Self::GumbelHalf => "gumbel_half",
            Self::StableS1 => "stable_s1",
            Self::Lindley { .. } => "lindley",
            Self::AdaptiveNeyman { .. } => "adaptive_neyman",
            Self::ScoreSum { .. } => "score_sum",
            Self::ScoreMax { .. } => "score_max",
        }
    }

    /// `(K, n)` cache key; absent parameters are 0.
    pub fn key(&self) -> (usize, usize) {
        match *self {
            Self::SingletonBic { k, n }
            | Self::NestedBic { k, n }
            | Self::OrderSelBic { k, n }
            | Self::Lindley { k, n } => (k, n),
            Self::ExpChiSum { count, df } => (count, df),
            Self::OrderSelAic { k } | Self::ScoreSum { k } | Self::ScoreMax { k } => (k, 0),
            Self::AdaptiveNeyman { n } => (0, n),
            Self::GumbelHalf | Self::StableS1 => (0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        match *self {
            Self::SingletonBic { k, n } | Self::NestedBic { k, n } | Self::Lindley { k, n }
                if k == 0 || n < 2 =>
            {
                bad(format!("{} needs K ≥ 1 and n ≥ 2", self.kind_name()))
            }
            Self::OrderSelBic { k, n } if k == 0 || n < 2 => {
                bad("order_sel_bic needs K ≥ 1 and n ≥ 2".into())
            }
            Self::ExpChiSum { count, df } if count == 0 || df == 0 => {
                bad("exp_chi_sum needs count ≥ 1 and df ≥ 1".into())
            }
            Self::OrderSelAic { k } | Self::ScoreSum { k } | Self::ScoreMax { k } if k == 0 => {
                bad(format!("{} needs K ≥ 1", self.kind_name()))
            }
            Self::AdaptiveNeyman { n } if n < 8 => bad("adaptive_neyman needs n ≥ 8".into()),
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let chi1 = |rng: &mut ChaCha8Rng| {
            let z = standard_normal(rng);
            z * z
        };
        match *self {
            Self::SingletonBic { k, n } => {
                let s = score_sum(rng, k);
                s / (1.0 + s / (n as f64).sqrt())
            }
            Self::NestedBic { k, n } => {
                let nf = n as f64;
                let (mut num, mut den, mut w) = (0.0, 1.0, 0.0);
                for j in 1..=k {
                    w += chi1(rng);
                    let t = (0.5 * w).exp();
                    num += nf.powf(0.5 * (1.0 - j as f64)) * t;
                    den += nf.powf(-0.5 * j as f64) * t;
                }
                num / den
            }
            Self::ExpChiSum { count, df } => {
                (0..count).map(|_| (0.5 * rng::chi_square(rng, df)).exp()).sum()
            }
            Self::OrderSelAic { k } => {
                let (mut w, mut best, mut best_w) = (0.0, f64::NEG_INFINITY, 0.0);
                for r in 1..=k {
                    w += chi1(rng);
                    let crit = w - 2.0 * r as f64;
                    if crit > best {
                        best = crit;
                        best_w = w;
                    }
                }
                best_w
            }
            Self::OrderSelBic { k, n } => {
                let log_n = (n as f64).ln();
                let (mut w, mut best, mut best_w) = (0.0, f64::NEG_INFINITY, 0.0);
                for r in 1..=k {
                    w += chi1(rng);
                    let crit = w - r as f64 * log_n;
                    if crit > best {
                        best = crit;
                        best_w = w;
                    }
                }
                best_w
            }
            Self::GumbelHalf => {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                -2.0 * (-u.ln()).ln()
            }
            Self::StableS1 => stable_s1_draw(rng),
            Self::Lindley { k, n } => 1.0 / (1.0 + score_sum(rng, k) / (n as f64).sqrt()),
            Self::AdaptiveNeyman { n } => {
                let c: Vec<f64> = (0..n - 1).map(|_| standard_normal(rng)).collect();
                let sd = (c.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
                let z: Vec<f64> = c.iter().map(|x| x / sd).collect();
                adaptive_neyman_from_z(&z, n)
            }
            Self::ScoreSum { k } => score_sum(rng, k),
            Self::ScoreMax { k } => (0..k).map(|_| chi1(rng)).fold(0.0, f64::max),
        }
    }
}

fn score_sum(rng: &mut ChaCha8Rng, k: usize) -> f64 {
    (0..k)
        .map(|_| {
            let z = standard_normal(rng);
            (0.5 * z * z).exp()
        })
        .sum()
}

/// Chambers–Mallows–Stuck draw from `S₁(1, 1, 0)`.
pub fn stable_s1_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = PI * (rng.gen::<f64>() - 0.5);
    let w = -(1.0 - rng.gen::<f64>()).ln();
    let a = FRAC_PI_2 + u;
    (a * u.tan() - (FRAC_PI_2 * w * u.cos() / a).ln()) / FRAC_PI_2
}

/// CDF of `S₁(1, 1, 0)` by numerical integration of its one-dimensional
/// integral representation. Used as an independent check on simulation.
pub fn stable_s1_cdf(x: f64) -> f64 {
    stable_s1_integral(x, |e| (-e).exp())
}

/// Upper tail `1 − F(x)`, accurate far into the right tail.
pub fn stable_s1_sf(x: f64) -> f64 {
    stable_s1_integral(x, |e| -(-e).exp_m1())
}

fn stable_s1_integral(x: f64, g: impl Fn(f64) -> f64) -> f64 {
    let log_scale = -FRAC_PI_2 * x;
    // log V(θ), evaluated in logs so large x does not underflow.
    let log_v = |theta: f64| {
        let a = FRAC_PI_2 + theta;
        a.ln() - theta.cos().ln() + a * theta.tan() - FRAC_PI_2.ln()
    };
    let f = |theta: f64| {
        let e = (log_scale + log_v(theta)).exp();
        if e.is_nan() {
            g(f64::INFINITY)
        } else {
            g(e)
        }
    };
    let eps = 1e-12;
    integrate(f, -FRAC_PI_2 + eps, FRAC_PI_2 - eps, 16, 1e-14, 4000).value / PI
}

/// A sorted Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    pub law: LimitLaw,
    pub seed: u64,
    sorted: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn reps(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    fn order_stat(&self, q: f64) -> f64 {
        let r = self.sorted.len();
        let idx = ((r as f64 * q).ceil() as usize).clamp(1, r);
        self.sorted[idx - 1]
    }

    /// Order statistic at `⌈R q⌉`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.order_stat(q)
    }

    /// Half the spread between the order statistics at `q ± √(q(1−q)/R)`.
    pub fn mc_stderr(&self, q: f64) -> f64 {
        let s = (q * (1.0 - q) / self.reps() as f64).sqrt();
        0.5 * (self.order_stat((q + s).min(1.0)) - self.order_stat((q - s).max(0.0)))
    }

    /// Fraction of the sample `≤ x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.reps() as f64
    }
}

/// Draws `reps` replicates of `law`.
pub fn simulate_law(law: &LimitLaw, reps: usize, seed: u64) -> Result<EmpiricalLaw> {
    if reps < MIN_REPS {
        return Err(Error::Validation(format!("need at least {MIN_REPS} replicates, got {reps}")));
    }
    law.validate()?;
    let mut sorted = rng::blocked_sample(reps, seed, domain::LAW, |r| law.draw(r));
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalLaw {
        law: *law,
        seed,
        sorted,
    })
}

/// Stable-limit constants of `S_n`: scale `a_K` and centering `b_K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableLawParams {
    pub k: usize,
    pub a_k: f64,
    pub b_k: f64,
    /// Bound on the quadrature plus truncation error of `b_K`.
    pub b_k_error: f64,
}

/// `a_K = (√π/2) K/√(log K)` and
/// `b_K = (K a_K/√π) ∫₁^∞ sin(x/a_K)/(x² √log x) dx`.
pub fn stable_constants(k: usize) -> Result<StableLawParams> {
    if k < 2 {
        return Err(Error::Domain(format!("stable constants need K ≥ 2, got {k}")));
    }
    let kf = k as f64;
    let a = 0.5 * PI.sqrt() * kf / kf.ln().sqrt();

    // Tail past X after two integrations by parts is below 2a²|f′(X)|
    // with f(x) = 1/(x²√log x); the first boundary term is kept.
    let f = |x: f64| 1.0 / (x * x * x.ln().sqrt());
    let fprime_abs = |x: f64| {
        let l = x.ln();
        (2.0 * l + 0.5) / (x * x * x * l * l.sqrt())
    };
    let mut x_max = 10.0f64.max(a);
    while 2.0 * a * a * fprime_abs(x_max) > 1e-10 {
        x_max *= 1.5;
    }
    // x = exp(s²) removes the endpoint singularity.
    let s_max = x_max.ln().sqrt();
    let oscillations = (x_max / (2.0 * PI * a)).ceil() as usize;
    let body = integrate(
        |s: f64| {
            let e = (s * s).exp();
            2.0 * (e / a).sin() / e
        },
        0.0,
        s_max,
        64 + 8 * oscillations,
        1e-11,
        200_000,
    );
    if !body.converged {
        return Err(Error::Numeric(format!(
            "b_K quadrature reached error {:.3e}",
            body.error
        )));
    }
    let boundary = a * (x_max / a).cos() * f(x_max);
    let tail_bound = 2.0 * a * a * fprime_abs(x_max);
    let scale = kf * a / PI.sqrt();
    Ok(StableLawParams {
        k,
        a_k: a,
        b_k: scale * (body.value + boundary),
        b_k_error: scale * (body.error + tail_bound),
    })
}

/// Reference quantiles `(α, s_α)` of `S₁(1, 1, 0)`, `s_α` being the upper
/// α-point. Generated once with [`simulate_stable_quantiles`] from 10⁹
/// draws (seed 20_240_601) and frozen here.
pub const STABLE_TABLE: [(f64, f64); 17] = [
    (0.001, 641.435531),
    (0.005, 130.107112),
    (0.01, 66.023251),
    (0.025, 27.213088),
    (0.05, 14.004921),
    (0.1, 7.128858),
    (0.15, 4.686484),
    (0.2, 3.384365),
    (0.25, 2.550912),
    (0.3, 1.957545),
    (0.4, 1.140523),
    (0.5, 0.575570),
    (0.6, 0.135696),
    (0.7, -0.240448),
    (0.8, -0.594852),
    (0.9, -0.982837),
    (0.95, -1.241342),
];

#[cfg(test)]
const STABLE_GRID: [f64; 17] = [
    0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95,
];

/// Fine streaming histogram on an `asinh` scale, so quantiles of very
/// large samples need no storage of the draws.
struct AsinhHistogram {
    counts: Vec<u64>,
    below: u64,
    above: u64,
}

const HIST_LO: f64 = -6.0;
const HIST_HI: f64 = 14.0;
const HIST_BINS: usize = 1_000_000;

impl AsinhHistogram {
    fn new() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
            below: 0,
            above: 0,
        }
    }

    fn add(&mut self, x: f64) {
        let t = x.asinh();
        if t < HIST_LO {
            self.below += 1;
        } else if t >= HIST_HI {
            self.above += 1;
        } else {
            let b = ((t - HIST_LO) / (HIST_HI - HIST_LO) * HIST_BINS as f64) as usize;
            self.counts[b.min(HIST_BINS - 1)] += 1;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
        self
    }

    fn total(&self) -> u64 {
        self.below + self.above + self.counts.iter().sum::<u64>()
    }

    /// Value at rank `⌈N q⌉`, interpolated linearly within its bin.
    fn quantile(&self, q: f64) -> f64 {
        let total = self.total();
        let target = ((total as f64 * q).ceil() as u64).clamp(1, total);
        let mut seen = self.below;
        if target <= seen {
            return f64::NEG_INFINITY;
        }
        let width = (HIST_HI - HIST_LO) / HIST_BINS as f64;
        for (b, &c) in self.counts.iter().enumerate() {
            if seen + c >= target {
                let frac = (target - seen) as f64 / c as f64;
                return (HIST_LO + width * (b as f64 + frac)).sinh();
            }
            seen += c;
        }
        f64::INFINITY
    }
}

/// Upper α-points of `S₁(1, 1, 0)` from `draws` sampler draws.
pub fn simulate_stable_quantiles(draws: u64, seed: u64, alphas: &[f64]) -> Vec<f64> {
    const CHUNK: u64 = 1 << 22;
    let chunks = draws.div_ceil(CHUNK);
    let hist = (0..chunks)
        .into_par_iter()
        .fold(AsinhHistogram::new, |mut h, c| {
            let mut rng = rng::stream(seed, domain::STABLE, c);
            let len = CHUNK.min(draws - c * CHUNK);
            for _ in 0..len {
                h.add(stable_s1_draw(&mut rng));
            }
            h
        })
        .reduce(AsinhHistogram::new, AsinhHistogram::merge);
    alphas.iter().map(|&a| hist.quantile(1.0 - a)).collect()
}

/// Draws behind off-table quantiles.
const LAZY_DRAWS: u64 = 10_000_000;
const LAZY_SEED: u64 = 20_240_602;

/// `s_α`, the upper α-point of `S₁(1, 1, 0)`: the frozen table when `α`
/// is on its grid, otherwise a cached 10⁷-draw simulation.
pub fn stable_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("α = {alpha} outside (0, 1)")));
    }
    if let Some(&(_, s)) = STABLE_TABLE.iter().find(|(a, _)| *a == alpha) {
        return Ok(s);
    }
    static LAZY: OnceLock<Mutex<Vec<(f64, f64)>>> = OnceLock::new();
    let lazy = LAZY.get_or_init(|| Mutex::new(Vec::new()));
    let mut memo = lazy.lock().expect("stable quantile memo poisoned");
    if let Some(&(_, s)) = memo.iter().find(|(a, _)| *a == alpha) {
        return Ok(s);
    }
    let s = simulate_stable_quantiles(LAZY_DRAWS, LAZY_SEED, &[alpha])[0];
    memo.push((alpha, s));
    Ok(s)
}

/// `x_α = −2 log(−log(1 − α))`, the upper α-point of `exp(−exp(−x/2))`.
pub fn gumbel_half_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("α = {alpha} outside (0, 1)")));
    }
    Ok(-2.0 * (-(1.0 - alpha).ln()).ln())
}

/// Lower α-points of the Lindley law for each `n`, from one shared sample
/// of `Σ exp(V_j/2)` (closed form when `K = 1`).
pub fn lindley_curve(k: usize, ns: &[usize], alpha: f64, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if k == 0 || ns.iter().any(|&n| n < 2) {
        return Err(Error::Validation("Lindley law needs K ≥ 1 and n ≥ 2".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("α = {alpha} outside (0, 1)")));
    }
    let upper = if k == 1 {
        let chi = ChiSquared::new(1.0).map_err(|e| Error::Numeric(e.to_string()))?;
        (0.5 * chi.inverse_cdf(1.0 - alpha)).exp()
    } else {
        // π is decreasing in S, so the ⌈Rα⌉-th smallest π comes from the
        // (R − ⌈Rα⌉ + 1)-th smallest S.
        let sample = simulate_law(&LimitLaw::Lindley { k, n: 4 }, reps, seed)?;
        let r = sample.reps();
        let idx = ((r as f64 * alpha).ceil() as usize).clamp(1, r);
        let pi4 = sample.sorted()[idx - 1];
        2.0 * (1.0 / pi4 - 1.0)
    };
    Ok(ns
        .iter()
        .map(|&n| 1.0 / (1.0 + upper / (n as f64).sqrt()))
        .collect())
}

/// `p_{n,K,α}`, the lower α-point of `1/(1 + n^{−1/2} Σ_{j≤K} exp(V_j/2))`.
pub fn lindley_percentile(n: usize, k: usize, alpha: f64, reps: usize, seed: u64) -> Result<f64> {
    Ok(lindley_curve(k, &[n], alpha, reps, seed)?[0])
}

/// Limiting local power of the `S_n` test.
pub fn theoretical_local_power(gamma1: f64, gamma2: f64, zeta: f64, alpha: f64) -> Result<f64> {
    if !(gamma2 >= 0.0) || !(zeta > 0.0) {
        return Err(Error::Domain("need γ₂ ≥ 0 and ζ > 0".into()));
    }
    let boundary = 1.0 / zeta;
    if (gamma2 - boundary).abs() <= 1e-12 * boundary {
        let phi = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(alpha + (1.0 - alpha) * phi.cdf(gamma1 * zeta))
    } else if gamma2 < boundary {
        Ok(alpha)
    } else {
        Ok(1.0)
    }
}

/// A critical value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub test: TestName,
    pub law: LimitLaw,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub alpha: f64,
    /// Zero for closed forms.
    pub reps: usize,
    pub seed: u64,
    /// Upper α-point of the law (the large-value form for π-type tests).
    pub quantile: f64,
    pub mc_stderr: f64,
    /// Rejection threshold on the statistic's own scale.
    pub threshold: f64,
    pub source: ReferenceSource,
}

impl CriticalValue {
    pub fn reference(&self) -> Reference {
        Reference {
            test: self.test,
            k: self.k,
            n: self.n,
            source: self.source,
            value: self.threshold,
            provenance: Some(match self.source {
                ReferenceSource::Simulated => format!(
                    "{} reps={} seed={}",
                    self.law.kind_name(),
                    self.reps,
                    self.seed
                ),
                _ => format!("{} closed form", self.law.kind_name()),
            }),
        }
    }
}

/// The law behind each test's critical value.
pub fn law_for_test(test: TestName, k: usize, n: usize) -> Result<LimitLaw> {
    Ok(match test {
        TestName::Bs => LimitLaw::SingletonBic { k, n },
        TestName::Bn => LimitLaw::NestedBic { k, n },
        TestName::La => LimitLaw::OrderSelAic { k },
        TestName::Lb => LimitLaw::OrderSelBic { k, n },
        TestName::Ms => LimitLaw::GumbelHalf,
        TestName::Na => LimitLaw::AdaptiveNeyman { n },
        TestName::Sn => LimitLaw::ScoreSum { k },
        TestName::Rn => LimitLaw::ScoreMax { k },
        TestName::PiSingleton => {
            return Err(Error::Usage(
                "pi_singleton has no tabulated law; use a bootstrap reference".into(),
            ))
        }
    })
}

/// Critical values of `test` at several levels from a single simulation.
pub fn critical_values(
    test: TestName,
    k: usize,
    n: usize,
    alphas: &[f64],
    reps: usize,
    seed: u64,
    cache: Option<&CriticalValueCache>,
) -> Result<Vec<CriticalValue>> {
    let law = law_for_test(test, k, n)?;
    let (key_k, key_n) = law.key();
    let to_threshold = |q: f64| {
        if test.rejects_small() {
            1.0 - q / (n as f64).sqrt()
        } else {
            q
        }
    };
    let make = |alpha: f64, q: f64, se: f64, reps: usize, source| CriticalValue {
        test,
        law,
        k: (key_k > 0).then_some(k),
        n: (key_n > 0).then_some(n),
        alpha,
        reps,
        seed,
        quantile: q,
        mc_stderr: se,
        threshold: to_threshold(q),
        source,
    };

    let mut out: Vec<Option<CriticalValue>> = vec![None; alphas.len()];
    let mut pending = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        if alpha >= 1.0 {
            out[i] = Some(make(alpha, f64::NEG_INFINITY, 0.0, 0, ReferenceSource::Asymptotic));
        } else if alpha <= 0.0 {
            out[i] = Some(make(alpha, f64::INFINITY, 0.0, 0, ReferenceSource::Asymptotic));
        } else if law == LimitLaw::GumbelHalf {
            out[i] = Some(make(alpha, gumbel_half_quantile(alpha)?, 0.0, 0, ReferenceSource::Asymptotic));
        } else if let Some(row) = match cache {
            Some(c) => c.lookup(law.kind_name(), key_k, key_n, alpha, reps, seed)?,
            None => None,
        } {
            out[i] = Some(make(alpha, row.quantile, row.mc_stderr, reps, ReferenceSource::Simulated));
        } else {
            pending.push(i);
        }
    }
    if !pending.is_empty() {
        law.validate()?;
        let sample = simulate_law(&law, reps, seed)?;
        for i in pending {
            let q = 1.0 - alphas[i];
            let (quantile, se) = (sample.quantile(q), sample.mc_stderr(q));
            if let Some(c) = cache {
                c.store(
                    law.kind_name(),
                    &CacheRow {
                        k: key_k,
                        n: key_n,
                        alpha: alphas[i],
                        reps,
                        seed,
                        quantile,
                        mc_stderr: se,
                    },
                )?;
            }
            out[i] = Some(make(alphas[i], quantile, se, reps, ReferenceSource::Simulated));
        }
    }
    Ok(out.into_iter().map(|c| c.expect("every level filled")).collect())
}

/// Critical value of `test` at level `alpha`.
pub fn critical_value(
    test: TestName,
    k: usize,
    n: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
    cache: Option<&CriticalValueCache>,
) -> Result<CriticalValue> {
    Ok(critical_values(test, k, n, &[alpha], reps, seed, cache)?.remove(0))
}
