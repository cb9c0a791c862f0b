//! Config-driven simulation studies on the normal-response model
//! `Y_i ~ N(θ + γ(x_i), η)` with `x_i = (i − ½)/n`.
//!
//! Output CSV schemas (all version [`CSV_SCHEMA_VERSION`]):
//!
//! * type I error: `test,alpha,rate,critical,reps`
//! * power: `alternative,m,test,alpha,power,reps`
//! * local power: `test,alpha,power,theoretical,reps`
//! * Lindley curves: `sqrt_n,K,percentile`

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alternatives::{build_family, fit_family_projected, select_positive_order, AlternativeFamily, Criterion, FamilyKind};
use crate::basis::{cosine_design, equispaced_design, legendre_design, orthonormalize, BasisKind, BasisSet, OrthonormalSystem};
use crate::cache::CriticalValueCache;
use crate::error::{Error, Result};
use crate::glm::{fit_mle, Dataset, DispersionMode, FittedModel, Gaussian, NullSpec};
use crate::null_dist::{critical_values, lindley_curve, stable_constants, theoretical_local_power};
use crate::rng::{self, domain, standard_normal};
use crate::statistics::{
    adaptive_neyman, decide, max_test_ms, pi_bic, r_n, s_n, score_vector, Reference, ReferenceSource, TestName,
    TestResult,
};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Offset separating null-run data streams from alternative-run streams.
const NULL_STREAM_OFFSET: u64 = 1 << 40;

/// The regression function added to the null constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlternativeSpec {
    Null,
    /// `u_m(x)`.
    SingleEffect { m: usize },
    /// `m^{−1/2} Σ_{k≤m} u_k(x)`.
    NestedEffect { m: usize },
    /// `n^{−1/2}(γ₁ + γ₂ √(2 log a_K)) Σ_j φ_j v_j(x)`.
    Local { gamma1: f64, gamma2: f64, phi: Vec<f64> },
}

impl AlternativeSpec {
    fn max_index(&self) -> usize {
        match self {
            Self::Null => 0,
            Self::SingleEffect { m } | Self::NestedEffect { m } => *m,
            Self::Local { phi, .. } => phi.len(),
        }
    }
}

impl fmt::Display for AlternativeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Null => write!(f, "null"),
            Self::SingleEffect { m } => write!(f, "single:{m}"),
            Self::NestedEffect { m } => write!(f, "nested:{m}"),
            Self::Local { gamma1, gamma2, phi } => {
                let phi: Vec<String> = phi.iter().map(|p| p.to_string()).collect();
                write!(f, "local:{gamma1}:{gamma2}:{}", phi.join(","))
            }
        }
    }
}

/// Parses `null`, `single:M`, `nested:M` or `local:G1:G2:PHI1,PHI2,…`.
impl FromStr for AlternativeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse alternative `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let idx = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["null"] => Ok(Self::Null),
            ["single", m] => Ok(Self::SingleEffect { m: idx(m)? }),
            ["nested", m] => Ok(Self::NestedEffect { m: idx(m)? }),
            ["local", g1, g2, phi] => Ok(Self::Local {
                gamma1: num(g1)?,
                gamma2: num(g2)?,
                phi: phi.split(',').map(num).collect::<Result<_>>()?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub alphas: Vec<f64>,
    pub tests: Vec<TestName>,
    pub basis: BasisKind,
    pub alternative: AlternativeSpec,
    /// Response variance.
    pub eta: f64,
    /// Null constant.
    pub theta: f64,
    /// Multiplier on the single and nested effect functions.
    pub amplitude: f64,
    pub seed: u64,
    /// Replicates behind simulated critical values.
    pub critical_reps: usize,
    /// Null replicates behind the power study's critical points.
    pub null_reps: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 100,
            k: 10,
            reps: 5000,
            alphas: vec![0.1, 0.05, 0.01],
            tests: TestName::STUDY.to_vec(),
            basis: BasisKind::Legendre,
            alternative: AlternativeSpec::Null,
            eta: 0.1,
            theta: 0.0,
            amplitude: 1.0,
            seed: 1,
            critical_reps: 30_000,
            null_reps: 5000,
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a flat `key = value` file over the defaults. Blank lines and
    /// `#` comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for {key}")))
        }
        match key {
            "n" => self.n = num(key, value)?,
            "K" => self.k = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "alpha" => {
                self.alphas = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "tests" => {
                self.tests = value
                    .split(',')
                    .map(|v| v.trim().parse::<TestName>().map_err(|_| Error::Config(format!("unknown test `{v}`"))))
                    .collect::<Result<_>>()?
            }
            "basis" => self.basis = value.parse().map_err(|_| Error::Config(format!("unknown basis `{value}`")))?,
            "alt" => self.alternative = value.parse()?,
            "eta" => self.eta = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "amplitude" => self.amplitude = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "critical_reps" => self.critical_reps = num(key, value)?,
            "null_reps" => self.null_reps = num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 10 {
            return bad(format!("n = {} is below 10", self.n));
        }
        if self.reps < 100 {
            return bad(format!("reps = {} is below 100", self.reps));
        }
        if self.k == 0 || self.k >= self.n {
            return bad(format!("K = {} must lie in 1..n", self.k));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alpha levels must lie in [0, 1]".into());
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("η = {} is not a variance", self.eta));
        }
        if !self.theta.is_finite() || !self.amplitude.is_finite() {
            return bad("θ and amplitude must be finite".into());
        }
        let m = self.alternative.max_index();
        if m > self.k {
            return bad(format!("alternative index {m} exceeds K = {}", self.k));
        }
        if matches!(self.alternative, AlternativeSpec::SingleEffect { m: 0 } | AlternativeSpec::NestedEffect { m: 0 })
        {
            return bad("effect index must be at least 1".into());
        }
        if let AlternativeSpec::Local { phi, .. } = &self.alternative {
            if phi.is_empty() || phi.iter().all(|p| *p == 0.0) {
                return bad("local alternative needs a nonzero φ".into());
            }
        }
        Ok(())
    }

    /// `ζ = max|φ_j| / √η` for a local alternative.
    pub fn zeta(&self) -> Option<f64> {
        match &self.alternative {
            AlternativeSpec::Local { phi, .. } => {
                Some(phi.iter().fold(0.0f64, |m, p| m.max(p.abs())) / self.eta.sqrt())
            }
            _ => None,
        }
    }
}

/// Design points, raw directions and their orthonormalization against the
/// constant, shared by every replicate.
#[derive(Debug, Clone)]
pub struct StudyDesign {
    pub x: Vec<f64>,
    pub raw: BasisSet,
    pub system: OrthonormalSystem,
    pub null: NullSpec,
    nested: AlternativeFamily,
    singleton: AlternativeFamily,
}

impl StudyDesign {
    pub fn new(n: usize, k: usize, basis: BasisKind) -> Result<Self> {
        let x = equispaced_design(n);
        let raw = match basis {
            BasisKind::Legendre => legendre_design(k, n)?,
            BasisKind::Cosine => cosine_design(k, &x, false)?,
            BasisKind::Custom => return Err(Error::Config("studies need a cosine or Legendre basis".into())),
        };
        let null = NullSpec::intercept(n);
        let system = orthonormalize(&raw, &null, &vec![1.0; n])?;
        Ok(Self {
            x,
            raw,
            system,
            null,
            nested: build_family(FamilyKind::Nested, k)?,
            singleton: build_family(FamilyKind::Singleton, k)?,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.raw.k()
    }
}

/// Mean function of `config.alternative` on the design, without `θ`.
fn effect(config: &ExperimentConfig, design: &StudyDesign) -> Result<DVector<f64>> {
    let n = design.n();
    let u = |m: usize| design.raw.values.column(m - 1).into_owned();
    Ok(match &config.alternative {
        AlternativeSpec::Null => DVector::zeros(n),
        AlternativeSpec::SingleEffect { m } => u(*m) * config.amplitude,
        AlternativeSpec::NestedEffect { m } => {
            (1..=*m).fold(DVector::zeros(n), |acc, k| acc + u(k)) * (config.amplitude / (*m as f64).sqrt())
        }
        AlternativeSpec::Local { gamma1, gamma2, phi } => {
            let a_k = stable_constants(design.k())?.a_k;
            let size = (gamma1 + gamma2 * (2.0 * a_k.ln()).sqrt()) / (n as f64).sqrt();
            phi.iter()
                .enumerate()
                .fold(DVector::zeros(n), |acc, (j, p)| acc + design.system.values.column(j) * *p)
                * size
        }
    })
}

fn draw_dataset(config: &ExperimentConfig, design: &StudyDesign, mean: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let sd = config.eta.sqrt();
    let y: Vec<f64> = mean.iter().map(|m| config.theta + m + sd * standard_normal(rng)).collect();
    Dataset::scalar(design.x.clone(), y)
}

/// Dataset `replicate` of the configured model; a pure function of
/// `(config, replicate)`.
pub fn generate_data(config: &ExperimentConfig, replicate: usize) -> Result<Dataset> {
    config.validate()?;
    let design = StudyDesign::new(config.n, config.k, config.basis)?;
    let mean = effect(config, &design)?;
    let mut rng = rng::stream(config.seed, domain::DATA, replicate as u64);
    draw_dataset(config, &design, &mean, &mut rng)
}

/// Every study statistic on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyStatistics {
    pub la: f64,
    pub lb: f64,
    pub pi_nested: f64,
    pub pi_singleton_family: f64,
    /// Log-odds of the two π statistics, monotone in evidence and never
    /// saturated.
    pub log_odds_nested: f64,
    pub log_odds_singleton: f64,
    pub ms: f64,
    pub na: f64,
    /// `ℒ_j` of the singleton models `{j}`.
    pub singleton_lr: Vec<f64>,
    /// `ℒ_j` of the nested models `{1..j}`.
    pub nested_lr: Vec<f64>,
}

impl StudyStatistics {
    /// Value compared against the test's reference.
    pub fn value(&self, test: TestName) -> Result<f64> {
        Ok(match test {
            TestName::La => self.la,
            TestName::Lb => self.lb,
            TestName::Bn => self.pi_nested,
            TestName::Bs => self.pi_singleton_family,
            TestName::Ms => self.ms,
            TestName::Na => self.na,
            other => return Err(Error::Config(format!("{other} is not a study test"))),
        })
    }

    /// Larger means more evidence against the null.
    fn evidence(&self, test: PowerTest) -> Result<f64> {
        Ok(match test {
            PowerTest::Omnibus(TestName::Bn) => self.log_odds_nested,
            PowerTest::Omnibus(TestName::Bs) => self.log_odds_singleton,
            PowerTest::Omnibus(t) => self.value(t)?,
            PowerTest::Oracle => unreachable!("oracle evidence depends on the alternative"),
            PowerTest::FullModel => *self.nested_lr.last().expect("K ≥ 1"),
        })
    }
}

/// Fits the null and both families and evaluates the six study tests.
pub fn study_statistics(design: &StudyDesign, data: &Dataset) -> Result<StudyStatistics> {
    let null_fit: FittedModel = fit_mle(&Gaussian, design.null.matrix(), data, DispersionMode::Estimate)?;
    let nested = fit_family_projected(&design.nested, &null_fit, &design.system, data, DispersionMode::Estimate)?;
    let singleton = fit_family_projected(&design.singleton, &null_fit, &design.system, data, DispersionMode::Estimate)?;
    let pn = pi_bic(&nested);
    let ps = pi_bic(&singleton);
    let resid = &data.y - &null_fit.linear_predictor;
    Ok(StudyStatistics {
        la: select_positive_order(&nested, Criterion::Aic)?.statistic,
        lb: select_positive_order(&nested, Criterion::Bic)?.statistic,
        pi_nested: pn.value,
        pi_singleton_family: ps.value,
        log_odds_nested: pn.log_odds,
        log_odds_singleton: ps.log_odds,
        ms: max_test_ms(&singleton, design.k())?,
        na: adaptive_neyman(resid.as_slice())?,
        singleton_lr: singleton.lr,
        nested_lr: nested.lr,
    })
}

fn simulate_statistics(
    config: &ExperimentConfig,
    design: &StudyDesign,
    reps: usize,
    stream_offset: u64,
) -> Result<Vec<StudyStatistics>> {
    let mean = effect(config, design)?;
    rng::per_replicate(reps, config.seed, domain::DATA, |b, _| {
        let mut rng = rng::stream(config.seed, domain::DATA, stream_offset + b as u64);
        draw_dataset(config, design, &mean, &mut rng)
            .and_then(|d| study_statistics(design, &d))
            .map_err(|e| e.in_replicate(b))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeOneRow {
    pub test: TestName,
    pub alpha: f64,
    pub rate: f64,
    /// Threshold on the statistic's own scale.
    pub critical: f64,
    pub reps: usize,
}

/// Null rejection rates of the configured tests against their simulated
/// (or, for `M_S`, asymptotic) critical values.
pub fn run_type1_study(config: &ExperimentConfig, cache: Option<&CriticalValueCache>) -> Result<Vec<TypeOneRow>> {
    config.validate()?;
    if config.alternative != AlternativeSpec::Null {
        return Err(Error::Config("type I study needs alt = null".into()));
    }
    let design = StudyDesign::new(config.n, config.k, config.basis)?;
    let stats = simulate_statistics(config, &design, config.reps, 0)?;
    let mut rows = Vec::new();
    for &test in &config.tests {
        let cvs = critical_values(test, config.k, config.n, &config.alphas, config.critical_reps, config.seed, cache)?;
        for cv in cvs {
            let reference = cv.reference();
            let mut rejections = 0usize;
            for s in &stats {
                let r = decide(test, cv.k, cv.n, s.value(test)?, &reference, cv.alpha, false)?;
                rejections += usize::from(r.reject);
            }
            rows.push(TypeOneRow {
                test,
                alpha: cv.alpha,
                rate: rejections as f64 / stats.len() as f64,
                critical: cv.threshold,
                reps: stats.len(),
            });
        }
    }
    Ok(rows)
}

/// A study test or one of the two parametric comparators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PowerTest {
    Omnibus(TestName),
    /// Likelihood ratio against the true alternative model.
    Oracle,
    /// Likelihood ratio against the largest nested model.
    FullModel,
}

impl fmt::Display for PowerTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Omnibus(t) => write!(f, "{t}"),
            Self::Oracle => write!(f, "Oracle"),
            Self::FullModel => write!(f, "FM"),
        }
    }
}

impl Serialize for PowerTest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub alternative: String,
    pub m: usize,
    pub test: PowerTest,
    pub alpha: f64,
    pub power: f64,
    pub reps: usize,
}

/// Upper order statistic `⌈R(1 − α)⌉` of `values`; rejection is strict.
fn empirical_critical(mut values: Vec<f64>, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if alpha <= 0.0 {
        return f64::INFINITY;
    }
    values.sort_by(f64::total_cmp);
    let r = values.len();
    let idx = ((r as f64 * (1.0 - alpha)).ceil() as usize).clamp(1, r);
    values[idx - 1]
}

/// Power curves over `m = 1..=M` for the configured `single:M` or
/// `nested:M` alternative. Critical points of every test, the comparators
/// included, are upper quantiles of `null_reps` null datasets.
pub fn run_power_study(config: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    config.validate()?;
    let (nested_kind, m_max) = match config.alternative {
        AlternativeSpec::SingleEffect { m } => (false, m),
        AlternativeSpec::NestedEffect { m } => (true, m),
        _ => return Err(Error::Config("power study needs alt = single:M or nested:M".into())),
    };
    if config.null_reps < 100 {
        return Err(Error::Config("null_reps must be at least 100".into()));
    }
    let design = StudyDesign::new(config.n, config.k, config.basis)?;
    let null_config = ExperimentConfig {
        alternative: AlternativeSpec::Null,
        ..config.clone()
    };
    let null_stats = simulate_statistics(&null_config, &design, config.null_reps, NULL_STREAM_OFFSET)?;
    let oracle_lr = |s: &StudyStatistics, m: usize| {
        if nested_kind {
            s.nested_lr[m - 1]
        } else {
            s.singleton_lr[m - 1]
        }
    };

    let mut tests: Vec<PowerTest> = config.tests.iter().map(|&t| PowerTest::Omnibus(t)).collect();
    tests.push(PowerTest::Oracle);
    tests.push(PowerTest::FullModel);
    let mut criticals: BTreeMap<(PowerTest, usize, u64), f64> = BTreeMap::new();
    for &test in &tests {
        for &alpha in &config.alphas {
            for m in 1..=m_max {
                if test != PowerTest::Oracle && m > 1 {
                    continue;
                }
                let values = null_stats
                    .iter()
                    .map(|s| if test == PowerTest::Oracle { Ok(oracle_lr(s, m)) } else { s.evidence(test) })
                    .collect::<Result<Vec<f64>>>()?;
                criticals.insert((test, m, alpha.to_bits()), empirical_critical(values, alpha));
            }
        }
    }

    let mut rows = Vec::new();
    for m in 1..=m_max {
        let alt = if nested_kind {
            AlternativeSpec::NestedEffect { m }
        } else {
            AlternativeSpec::SingleEffect { m }
        };
        let alt_config = ExperimentConfig {
            alternative: alt.clone(),
            ..config.clone()
        };
        let stats = simulate_statistics(&alt_config, &design, config.reps, 0)?;
        for &test in &tests {
            for &alpha in &config.alphas {
                let key_m = if test == PowerTest::Oracle { m } else { 1 };
                let crit = criticals[&(test, key_m, alpha.to_bits())];
                let mut hits = 0usize;
                for s in &stats {
                    let v = if test == PowerTest::Oracle { oracle_lr(s, m) } else { s.evidence(test)? };
                    hits += usize::from(v > crit || alpha >= 1.0);
                }
                rows.push(PowerRow {
                    alternative: alt.to_string(),
                    m,
                    test,
                    alpha,
                    power: hits as f64 / stats.len() as f64,
                    reps: stats.len(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPowerRow {
    pub test: TestName,
    pub alpha: f64,
    pub power: f64,
    /// Limiting power of the score tests at this `(γ₁, γ₂, ζ)`.
    pub theoretical: f64,
    pub reps: usize,
}

/// Rejection rates of `S_n` and `R_n` under the configured local
/// alternative, against fixed-`K` simulated critical values.
pub fn run_local_power_study(config: &ExperimentConfig, cache: Option<&CriticalValueCache>) -> Result<Vec<LocalPowerRow>> {
    config.validate()?;
    let AlternativeSpec::Local { gamma1, gamma2, .. } = config.alternative else {
        return Err(Error::Config("local power study needs alt = local:G1:G2:PHI".into()));
    };
    let zeta = config.zeta().expect("local alternative");
    let design = StudyDesign::new(config.n, config.k, config.basis)?;
    let mean = effect(config, &design)?;
    let scores = rng::per_replicate(config.reps, config.seed, domain::DATA, |b, rng| {
        let mut run = || {
            let data = draw_dataset(config, &design, &mean, rng)?;
            let null_fit = fit_mle(&Gaussian, design.null.matrix(), &data, DispersionMode::Estimate)?;
            let score = score_vector(&Gaussian, &data, &null_fit, &design.system)?;
            Ok((s_n(&score).value, r_n(&score)))
        };
        run().map_err(|e: Error| e.in_replicate(b))
    })
    .into_iter()
    .collect::<Result<Vec<(f64, f64)>>>()?;

    let mut rows = Vec::new();
    for test in [TestName::Sn, TestName::Rn] {
        let cvs = critical_values(test, config.k, config.n, &config.alphas, config.critical_reps, config.seed, cache)?;
        for cv in cvs {
            let reference = cv.reference();
            let mut hits = 0usize;
            for &(s, r) in &scores {
                let v = if test == TestName::Sn { s } else { r };
                hits += usize::from(decide(test, cv.k, cv.n, v, &reference, cv.alpha, false)?.reject);
            }
            rows.push(LocalPowerRow {
                test,
                alpha: cv.alpha,
                power: hits as f64 / scores.len() as f64,
                theoretical: theoretical_local_power(gamma1, gamma2, zeta, cv.alpha)?,
                reps: scores.len(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindleyRow {
    pub sqrt_n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub percentile: f64,
}

/// `p_{n,K,α}` over `n = s²` for every `s` in `sqrt_ns` and every `K`.
pub fn run_lindley_study(ks: &[usize], sqrt_ns: &[usize], alpha: f64, reps: usize, seed: u64) -> Result<Vec<LindleyRow>> {
    if sqrt_ns.iter().any(|&s| s < 2) {
        return Err(Error::Config("√n grid values must be at least 2".into()));
    }
    let ns: Vec<usize> = sqrt_ns.iter().map(|s| s * s).collect();
    let mut rows = Vec::with_capacity(ks.len() * ns.len());
    for &k in ks {
        let curve = lindley_curve(k, &ns, alpha, reps, seed)?;
        rows.extend(sqrt_ns.iter().zip(curve).map(|(&sqrt_n, percentile)| LindleyRow { sqrt_n, k, percentile }));
    }
    Ok(rows)
}

/// Writes `rows` as CSV with a header.
pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    if let Some(parent) = path.as_ref().parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// CSV text of `rows`.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}

/// What `analyze_dataset` computes and compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub family: String,
    pub k: usize,
    pub basis: BasisKind,
    /// Degree of the polynomial null in the first covariate.
    pub null_degree: usize,
    pub tests: Vec<TestName>,
    pub alpha: f64,
    pub reference: ReferenceSource,
    /// Replicates behind simulated critical values.
    pub reps: usize,
    /// Bootstrap replicates when `reference` is bootstrap.
    pub bootstrap: usize,
    pub seed: u64,
    pub lindley_safe: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            family: "gaussian".into(),
            k: 10,
            basis: BasisKind::Legendre,
            null_degree: 0,
            tests: TestName::STUDY.to_vec(),
            alpha: 0.05,
            reference: ReferenceSource::Simulated,
            reps: 30_000,
            bootstrap: 1000,
            seed: 1,
            lindley_safe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub family: String,
    pub results: Vec<TestResult>,
    /// Replicates that failed to fit, when a bootstrap was run.
    pub bootstrap_failures: Option<usize>,
}

/// Raw directions for a dataset: Legendre columns follow the observation
/// order (equispaced design), cosine columns use the first covariate.
fn dataset_basis(data: &Dataset, k: usize, basis: BasisKind) -> Result<BasisSet> {
    match basis {
        BasisKind::Legendre => legendre_design(k, data.n()),
        BasisKind::Cosine => cosine_design(k, &data.covariate(), false),
        BasisKind::Custom => Err(Error::Usage("custom bases need the library interface".into())),
    }
}

/// Values of `tests` on one dataset, in order.
pub fn dataset_statistics(
    glm: &dyn crate::glm::ExponentialFamily,
    data: &Dataset,
    null: &NullSpec,
    raw: &BasisSet,
    tests: &[TestName],
) -> Result<Vec<f64>> {
    let k = raw.k();
    let null_fit = fit_mle(glm, null.matrix(), data, DispersionMode::Estimate)?;
    let weights = crate::basis::null_weights(glm, &null_fit);
    let system = orthonormalize(raw, null, &weights)?;
    let needs = |set: &[TestName]| tests.iter().any(|t| set.contains(t));
    let nested = if needs(&[TestName::La, TestName::Lb, TestName::Bn, TestName::PiSingleton]) {
        let family = build_family(FamilyKind::Nested, k)?;
        Some(crate::alternatives::fit_family(&family, &null_fit, null, &system.values, data, glm, DispersionMode::Estimate)?)
    } else {
        None
    };
    let singleton = if needs(&[TestName::Bs, TestName::Ms]) {
        let family = build_family(FamilyKind::Singleton, k)?;
        Some(crate::alternatives::fit_family(&family, &null_fit, null, &system.values, data, glm, DispersionMode::Estimate)?)
    } else {
        None
    };
    let score = if needs(&[TestName::Sn, TestName::Rn]) {
        Some(score_vector(glm, data, &null_fit, &system)?)
    } else {
        None
    };
    tests
        .iter()
        .map(|&t| {
            let nested = || nested.as_ref().expect("nested family fitted");
            let singleton = || singleton.as_ref().expect("singleton family fitted");
            let score = || score.as_ref().expect("score vector computed");
            Ok(match t {
                TestName::La => select_positive_order(nested(), Criterion::Aic)?.statistic,
                TestName::Lb => select_positive_order(nested(), Criterion::Bic)?.statistic,
                TestName::Bn => pi_bic(nested()).value,
                TestName::Bs => pi_bic(singleton()).value,
                TestName::Ms => max_test_ms(singleton(), k)?,
                TestName::Na => adaptive_neyman(null_fit.residuals(glm, data).as_slice())?,
                TestName::Sn => s_n(score()).value,
                TestName::Rn => r_n(score()),
                TestName::PiSingleton => crate::statistics::pi_singleton_steps(nested())?.value,
            })
        })
        .collect()
}

/// Limiting-law reference, where one exists in closed form.
fn asymptotic_reference(test: TestName, k: usize, alpha: f64) -> Result<Reference> {
    let gumbel = crate::null_dist::gumbel_half_quantile(alpha)?;
    let (value, law) = match test {
        TestName::Ms => (gumbel, "gumbel_half"),
        TestName::Rn => {
            if k < 2 {
                return Err(Error::Domain("R_n limit needs K ≥ 2".into()));
            }
            let log_k = (k as f64).ln();
            (gumbel + 2.0 * log_k - log_k.ln() - std::f64::consts::PI.ln(), "gumbel_half")
        }
        TestName::Sn => {
            let c = stable_constants(k)?;
            (c.a_k * crate::null_dist::stable_quantile(alpha)? + c.b_k, "stable_s1")
        }
        other => {
            return Err(Error::Usage(format!(
                "{other} has no closed-form limit; use a simulated or bootstrap reference"
            )))
        }
    };
    Ok(Reference {
        test,
        k: Some(k),
        n: None,
        source: ReferenceSource::Asymptotic,
        value,
        provenance: Some(format!("{law} closed form")),
    })
}

/// Runs the requested tests on one dataset.
pub fn analyze_dataset(data: &Dataset, spec: &AnalysisSpec, cache: Option<&CriticalValueCache>) -> Result<Analysis> {
    if spec.tests.is_empty() {
        return Err(Error::Usage("no tests requested".into()));
    }
    let glm = crate::glm::family_by_name(&spec.family)?;
    let n = data.n();
    let null = NullSpec::polynomial(&data.covariate(), spec.null_degree)?;
    let raw = dataset_basis(data, spec.k, spec.basis)?;
    let values = dataset_statistics(glm.as_ref(), data, &null, &raw, &spec.tests)?;

    let (references, failures) = match spec.reference {
        ReferenceSource::Bootstrap => {
            let null_fit = fit_mle(glm.as_ref(), null.matrix(), data, DispersionMode::Estimate)?;
            let bootstrap = crate::bootstrap::BootstrapSpec {
                generator: |_: usize, rng: &mut ChaCha8Rng| {
                    let y = null_fit
                        .linear_predictor
                        .iter()
                        .map(|&t| glm.sample(t, null_fit.dispersion_param, rng))
                        .collect::<Result<Vec<f64>>>()?;
                    Dataset::new(data.x.clone(), DVector::from_vec(y))
                },
                statistic: |d: &Dataset| dataset_statistics(glm.as_ref(), d, &null, &raw, &spec.tests),
                tails: spec
                    .tests
                    .iter()
                    .map(|t| if t.rejects_small() { crate::bootstrap::Tail::Lower } else { crate::bootstrap::Tail::Upper })
                    .collect(),
                replicates: spec.bootstrap,
                seed: spec.seed,
            };
            let out = crate::bootstrap::run_bootstrap(&bootstrap, &values)?;
            let refs = spec
                .tests
                .iter()
                .zip(&out.p_values)
                .map(|(&test, &p)| Reference {
                    test,
                    k: Some(spec.k),
                    n: Some(n),
                    source: ReferenceSource::Bootstrap,
                    value: p,
                    provenance: Some(format!("parametric bootstrap B={} seed={}", spec.bootstrap, spec.seed)),
                })
                .collect();
            (refs, Some(out.failures.len()))
        }
        ReferenceSource::Asymptotic => (
            spec.tests
                .iter()
                .map(|&t| asymptotic_reference(t, spec.k, spec.alpha))
                .collect::<Result<Vec<_>>>()?,
            None,
        ),
        ReferenceSource::Simulated => (
            spec.tests
                .iter()
                .map(|&t| {
                    crate::null_dist::critical_value(t, spec.k, n, spec.alpha, spec.reps, spec.seed, cache)
                        .map(|cv| cv.reference())
                })
                .collect::<Result<Vec<_>>>()?,
            None,
        ),
    };
    let results = spec
        .tests
        .iter()
        .zip(values)
        .zip(&references)
        .map(|((&test, value), reference)| {
            decide(test, reference.k, reference.n, value, reference, spec.alpha, spec.lindley_safe)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        n,
        k: spec.k,
        family: glm.name().to_string(),
        results,
        bootstrap_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alt: AlternativeSpec) -> ExperimentConfig {
        ExperimentConfig {
            n: 60,
            k: 6,
            reps: 200,
            alternative: alt,
            critical_reps: 2000,
            null_reps: 200,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::parse("# study\nn = 120\nK=8\nalpha = 0.1, 0.05\nalt = nested:3\namplitude=0.2\n").unwrap();
        assert_eq!((c.n, c.k, c.amplitude), (120, 8, 0.2));
        assert_eq!(c.alphas, vec![0.1, 0.05]);
        assert_eq!(c.alternative, AlternativeSpec::NestedEffect { m: 3 });
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("n = 5").is_err());
        assert!(ExperimentConfig::parse("K = 4\nalt = single:5").is_err());
        let local: AlternativeSpec = "local:0:1.5:1,0.5".parse().unwrap();
        assert_eq!(local.to_string().parse::<AlternativeSpec>().unwrap(), local);
    }

    #[test]
    fn noiseless_null_is_constant() {
        let c = ExperimentConfig { eta: 0.0, theta: 2.5, ..small(AlternativeSpec::Null) };
        let d = generate_data(&c, 3).unwrap();
        assert!(d.y.iter().all(|&y| y == 2.5));
        assert_eq!(d.covariate()[0], 0.5 / 60.0);
    }

    #[test]
    fn single_effect_mean() {
        let c = ExperimentConfig { n: 100, k: 10, ..small(AlternativeSpec::SingleEffect { m: 3 }) };
        let d = generate_data(&c, 0).unwrap();
        let u3 = legendre_design(10, 100).unwrap().values.column(2).into_owned();
        let diff = (&d.y - u3).mean();
        assert!(diff.abs() < 3.0 * (0.1f64 / 100.0).sqrt(), "{diff}");
        assert_eq!(d, generate_data(&c, 0).unwrap());
        assert_ne!(d, generate_data(&c, 1).unwrap());
    }

    #[test]
    fn degenerate_level_always_rejects() {
        let c = ExperimentConfig { alphas: vec![1.0], ..small(AlternativeSpec::Null) };
        let rows = run_type1_study(&c, None).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.rate == 1.0));
    }

    #[test]
    fn type1_output_is_deterministic() {
        let c = ExperimentConfig { alphas: vec![0.1], ..small(AlternativeSpec::Null) };
        let a = to_csv_string(&run_type1_study(&c, None).unwrap()).unwrap();
        assert_eq!(a, to_csv_string(&run_type1_study(&c, None).unwrap()).unwrap());
        assert!(a.starts_with("test,alpha,rate,critical,reps\n"));
        assert!(run_type1_study(&small(AlternativeSpec::SingleEffect { m: 1 }), None).is_err());
    }

    #[test]
    fn power_study_shape_and_null_level() {
        let c = ExperimentConfig {
            alphas: vec![0.05],
            amplitude: 0.0,
            ..small(AlternativeSpec::SingleEffect { m: 2 })
        };
        let rows = run_power_study(&c).unwrap();
        assert_eq!(rows.len(), 2 * 8);
        // Zero amplitude is the null: every rate is a level.
        assert!(rows.iter().all(|r| r.power < 0.15), "{rows:?}");
        assert!(rows.iter().any(|r| r.test == PowerTest::Oracle));
    }

    #[test]
    fn dataset_analysis_references() {
        let data = generate_data(&small(AlternativeSpec::SingleEffect { m: 2 }), 0).unwrap();
        let spec = AnalysisSpec {
            k: 6,
            tests: vec![TestName::Bs, TestName::Ms, TestName::Sn],
            reps: 2000,
            ..AnalysisSpec::default()
        };
        let sim = analyze_dataset(&data, &spec, None).unwrap();
        assert_eq!(sim.results.len(), 3);
        assert!(sim.results.iter().all(|r| r.reject), "{sim:?}");
        let asym = AnalysisSpec {
            tests: vec![TestName::Ms, TestName::Sn, TestName::Rn],
            reference: ReferenceSource::Asymptotic,
            ..spec.clone()
        };
        assert!(analyze_dataset(&data, &asym, None).unwrap().results.iter().all(|r| r.reject));
        let bad = AnalysisSpec { tests: vec![TestName::La], ..asym };
        assert!(matches!(analyze_dataset(&data, &bad, None), Err(Error::Usage(_))));
        let boot = AnalysisSpec {
            tests: vec![TestName::Bs, TestName::PiSingleton],
            reference: ReferenceSource::Bootstrap,
            bootstrap: 199,
            ..spec
        };
        let out = analyze_dataset(&data, &boot, None).unwrap();
        assert_eq!(out.bootstrap_failures, Some(0));
        assert!(out.results.iter().all(|r| r.reference_value == 1.0 / 200.0));
    }

    #[test]
    fn lindley_rows() {
        let rows = run_lindley_study(&[1, 5], &[2, 8, 40], 0.05, 2000, 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.percentile > 0.0 && r.percentile < 1.0));
        for s in 0..3 {
            assert!(rows[s].percentile > rows[3 + s].percentile);
        }
        let csv = to_csv_string(&rows).unwrap();
        assert!(csv.starts_with("sqrt_n,K,percentile\n"));
    }
}
