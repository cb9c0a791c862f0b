//! Lack-of-fit tests built on BIC approximations to the posterior
//! probability of a parametric null model.
//!
//! The crate covers the whole pipeline: exponential-family likelihoods
//! and IRLS fitting ([`glm`]), alternative-direction bases and their
//! weighted orthonormalization ([`basis`]), nested/singleton alternative
//! families ([`alternatives`]), the test statistics themselves
//! ([`statistics`]), simulated and closed-form null laws ([`null_dist`]),
//! a seeded parametric bootstrap ([`bootstrap`]), the variable-star trend
//! model ([`trend`]) and a config-driven experiment runner ([`harness`]).

pub mod alternatives;
pub mod basis;
pub mod bootstrap;
pub mod cache;
pub mod error;
pub mod glm;
pub mod harness;
pub mod null_dist;
mod optim;
mod quadrature;
pub mod rng;
pub mod statistics;
pub mod trend;

pub use alternatives::{
    build_family, fit_family, select_order, AlternativeFamily, Criterion, FamilyFit, FamilyKind,
    OrderSelection,
};
pub use basis::{
    cosine_design, equispaced_design, legendre_design, null_weights, orthonormalize, BasisKind,
    BasisSet, OrthonormalSystem,
};
pub use bootstrap::{run_bootstrap, BootstrapOutcome, BootstrapSpec, Tail};
pub use error::{Error, Result};
pub use harness::{
    analyze_dataset, generate_data, run_lindley_study, run_power_study, run_type1_study, Analysis,
    AlternativeSpec, AnalysisSpec, ExperimentConfig,
};
pub use glm::{
    fit_mle, likelihood_ratio, log_likelihood, Bernoulli, Dataset, DispersionMode,
    ExponentialFamily, FittedModel, Gaussian, NullSpec, Poisson,
};
pub use null_dist::{
    critical_value, gumbel_half_quantile, lindley_percentile, simulate_law, stable_constants,
    stable_quantile, theoretical_local_power, CriticalValue, LimitLaw, StableLawParams,
};
pub use statistics::{
    adaptive_neyman, decide, max_test_ms, pi_bic, pi_singleton_steps, r_n, s_n, score_vector,
    PiStatistic, Reference, ReferenceSource, ScoreVector, TestName, TestResult,
};
pub use trend::{
    build_covariance, fit_star, gaussian_loglik, select_trend, simulate_null_star, star_bootstrap,
    StarBootstrap, StarFit, StarSeriesModel, TrendSelection,
};
