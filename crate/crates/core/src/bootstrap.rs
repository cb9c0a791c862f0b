//! Seeded parametric bootstrap.
//!
//! Replicate `b` draws its dataset from stream `b` of the bootstrap domain,
//! so the null sample is identical for any worker count.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Smallest accepted replicate count.
pub const MIN_REPLICATES: usize = 100;

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Which side of the null sample counts as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// Large values are extreme.
    Upper,
    /// Small values are extreme (π-type statistics).
    Lower,
}

impl Tail {
    fn is_extreme(self, replicate: f64, observed: f64) -> bool {
        match self {
            Self::Upper => replicate >= observed,
            Self::Lower => replicate <= observed,
        }
    }
}

/// A null generator, a (possibly vector-valued) statistic and its tails.
pub struct BootstrapSpec<G, S> {
    /// `generator(b, rng)` simulates dataset `b` under the fitted null.
    pub generator: G,
    /// Computes every component of the statistic on one dataset.
    pub statistic: S,
    /// One tail per statistic component.
    pub tails: Vec<Tail>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    /// Null sample per component, in replicate order, failures omitted.
    pub null_samples: Vec<Vec<f64>>,
    /// `(1 + #extreme)/(B_ok + 1)` per component.
    pub p_values: Vec<f64>,
    /// Indices and messages of replicates that could not be evaluated.
    pub failures: Vec<(usize, String)>,
    pub replicates: usize,
    pub seed: u64,
}

/// Runs the bootstrap and computes add-one p-values for `observed`.
pub fn run_bootstrap<D, G, S>(spec: &BootstrapSpec<G, S>, observed: &[f64]) -> Result<BootstrapOutcome>
where
    G: Fn(usize, &mut ChaCha8Rng) -> Result<D> + Sync,
    S: Fn(&D) -> Result<Vec<f64>> + Sync,
{
    if spec.replicates < MIN_REPLICATES {
        return Err(Error::Validation(format!(
            "bootstrap needs B ≥ {MIN_REPLICATES}, got {}",
            spec.replicates
        )));
    }
    if observed.len() != spec.tails.len() {
        return Err(Error::Usage(format!(
            "{} observed values for {} tails",
            observed.len(),
            spec.tails.len()
        )));
    }
    let dim = observed.len();
    let results = rng::per_replicate(spec.replicates, spec.seed, domain::BOOTSTRAP, |b, rng| {
        let data = (spec.generator)(b, rng)?;
        let values = (spec.statistic)(&data)?;
        if values.len() != dim || values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("statistic returned {values:?}")));
        }
        Ok(values)
    });

    let mut null_samples = vec![Vec::with_capacity(spec.replicates); dim];
    let mut failures = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(values) => {
                for (sample, v) in null_samples.iter_mut().zip(values) {
                    sample.push(v);
                }
            }
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * spec.replicates as f64 {
        return Err(Error::Bootstrap {
            failures: failures.len(),
            replicates: spec.replicates,
        });
    }
    let ok = spec.replicates - failures.len();
    let p_values = null_samples
        .iter()
        .zip(&spec.tails)
        .zip(observed)
        .map(|((sample, tail), &obs)| {
            let extreme = sample.iter().filter(|&&v| tail.is_extreme(v, obs)).count();
            (1 + extreme) as f64 / (ok + 1) as f64
        })
        .collect();
    Ok(BootstrapOutcome {
        null_samples,
        p_values,
        failures,
        replicates: spec.replicates,
        seed: spec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_spec(b: usize, seed: u64) -> BootstrapSpec<
        impl Fn(usize, &mut ChaCha8Rng) -> Result<f64> + Sync,
        impl Fn(&f64) -> Result<Vec<f64>> + Sync,
    > {
        BootstrapSpec {
            generator: |_, rng: &mut ChaCha8Rng| Ok(rng.gen::<f64>()),
            statistic: |x: &f64| Ok(vec![*x]),
            tails: vec![Tail::Upper],
            replicates: b,
            seed,
        }
    }

    #[test]
    fn constant_statistic_gives_unit_p_value() {
        let spec = BootstrapSpec {
            generator: |_, _: &mut ChaCha8Rng| Ok(()),
            statistic: |_: &()| Ok(vec![3.0, 3.0]),
            tails: vec![Tail::Upper, Tail::Lower],
            replicates: 200,
            seed: 1,
        };
        let out = run_bootstrap(&spec, &[3.0, 3.0]).unwrap();
        assert_eq!(out.p_values, vec![1.0, 1.0]);
    }

    #[test]
    fn uniform_oracle_and_determinism() {
        let spec = uniform_spec(9999, 11);
        let out = run_bootstrap(&spec, &[0.5]).unwrap();
        assert!((out.p_values[0] - 0.5).abs() < 0.02, "{}", out.p_values[0]);
        assert_eq!(out, run_bootstrap(&spec, &[0.5]).unwrap());
        let high = run_bootstrap(&spec, &[2.0]).unwrap();
        assert_eq!(high.p_values[0], 1.0 / 10_000.0);
    }

    #[test]
    fn failures_are_recorded_and_bounded() {
        let spec = BootstrapSpec {
            generator: |b: usize, _: &mut ChaCha8Rng| {
                if b % 50 == 0 {
                    Err(Error::Fit("boundary".into()))
                } else {
                    Ok(b as f64)
                }
            },
            statistic: |x: &f64| Ok(vec![*x]),
            tails: vec![Tail::Upper],
            replicates: 500,
            seed: 3,
        };
        let out = run_bootstrap(&spec, &[0.0]).unwrap();
        assert_eq!(out.failures.len(), 10);
        assert_eq!(out.null_samples[0].len(), 490);
        assert_eq!(out.p_values[0], 1.0);

        let bad = BootstrapSpec {
            generator: |b: usize, _: &mut ChaCha8Rng| {
                if b % 10 == 0 {
                    Err(Error::Fit("boundary".into()))
                } else {
                    Ok(0.0)
                }
            },
            statistic: |x: &f64| Ok(vec![*x]),
            tails: vec![Tail::Upper],
            replicates: 500,
            seed: 3,
        };
        assert!(matches!(run_bootstrap(&bad, &[0.0]), Err(Error::Bootstrap { failures: 50, .. })));
    }

    #[test]
    fn p_values_are_uniform_under_the_generator() {
        let spec = uniform_spec(199, 5);
        let mut ps: Vec<f64> = (0..500)
            .map(|i| {
                let obs = crate::rng::stream(77, 0, i).gen::<f64>();
                run_bootstrap(&spec, &[obs]).unwrap().p_values[0]
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, p)| ((i + 1) as f64 / 500.0 - p).abs().max((p - i as f64 / 500.0).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.1, "KS distance {ks}");
    }
}
