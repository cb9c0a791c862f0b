//! Families of alternative models built on top of a null fit.
//!
//! Model `M_j` adds the directions indexed by `𝒦_j` to the null mean, so
//! `m_j − m₀ = |𝒦_j|`. Fits record the likelihood ratios `ℒ_j` and the
//! `AIC_j = log L_j − m_j`, `BIC_j = log L_j − ½ m_j log n` ladders used by
//! the order-selection tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalSystem;
use crate::error::{Error, Result};
use crate::glm::{fit_mle, Dataset, DispersionMode, ExponentialFamily, FittedModel, NullSpec};

/// Largest custom family accepted unless the caller raises the budget.
pub const DEFAULT_MODEL_BUDGET: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Nested,
    Singleton,
    Custom,
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(Self::Nested),
            "singleton" => Ok(Self::Singleton),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Usage(format!("unknown family kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeFamily {
    pub kind: FamilyKind,
    /// Number of available directions.
    pub k: usize,
    /// `𝒦_1..𝒦_J`, 1-based direction indices, sorted.
    pub index_sets: Vec<Vec<usize>>,
}

/// Nested (`𝒦_j = {1..j}`) or singleton (`𝒦_j = {j}`) family over `K`
/// directions. Use [`AlternativeFamily::custom`] for explicit sets.
pub fn build_family(kind: FamilyKind, k: usize) -> Result<AlternativeFamily> {
    if k == 0 {
        return Err(Error::Validation("alternative family needs K ≥ 1".into()));
    }
    let index_sets = match kind {
        FamilyKind::Nested => (1..=k).map(|j| (1..=j).collect()).collect(),
        FamilyKind::Singleton => (1..=k).map(|j| vec![j]).collect(),
        FamilyKind::Custom => {
            return Err(Error::Usage(
                "custom families need explicit index sets".into(),
            ))
        }
    };
    Ok(AlternativeFamily { kind, k, index_sets })
}

impl AlternativeFamily {
    pub fn custom(k: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        Self::custom_with_budget(k, sets, DEFAULT_MODEL_BUDGET)
    }

    pub fn custom_with_budget(k: usize, sets: Vec<Vec<usize>>, budget: usize) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Validation("custom family has no models".into()));
        }
        if sets.len() > budget {
            return Err(Error::Validation(format!(
                "{} models exceed the budget of {budget}",
                sets.len()
            )));
        }
        let mut index_sets = Vec::with_capacity(sets.len());
        for (j, mut set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Validation(format!("index set {} is empty", j + 1)));
            }
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&i| i == 0 || i > k) {
                return Err(Error::Validation(format!(
                    "index set {} refers to direction {bad}, outside 1..={k}",
                    j + 1
                )));
            }
            index_sets.push(set);
        }
        Ok(Self {
            kind: FamilyKind::Custom,
            k,
            index_sets,
        })
    }

    /// Every nonempty subset of `{1..K}`, subject to the model budget.
    pub fn all_subsets(k: usize, budget: usize) -> Result<Self> {
        if k >= usize::BITS as usize || (1usize << k) - 1 > budget {
            return Err(Error::Validation(format!(
                "all subsets of {k} directions exceed the budget of {budget}"
            )));
        }
        let sets = (1usize..(1 << k))
            .map(|mask| (0..k).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect())
            .collect();
        Self::custom_with_budget(k, sets, budget)
    }

    pub fn len(&self) -> usize {
        self.index_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_sets.is_empty()
    }

    /// `m_j − m₀` for every model.
    pub fn extra_dims(&self) -> Vec<usize> {
        self.index_sets.iter().map(Vec::len).collect()
    }

    pub fn dims(&self, m0: usize) -> Vec<usize> {
        self.extra_dims().into_iter().map(|d| m0 + d).collect()
    }

    fn max_index(&self) -> usize {
        self.index_sets.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Likelihood summaries for the null model (index 0) and each alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub kind: FamilyKind,
    pub n: usize,
    /// `m_0..m_J`.
    pub dims: Vec<usize>,
    /// `log L_0..log L_J`.
    pub loglik: Vec<f64>,
    /// `ℒ_1..ℒ_J`.
    pub lr: Vec<f64>,
    pub aic: Vec<f64>,
    pub bic: Vec<f64>,
}

impl FamilyFit {
    /// Assembles the summaries from maximized log-likelihoods.
    pub fn from_logliks(kind: FamilyKind, n: usize, dims: Vec<usize>, loglik: Vec<f64>) -> Result<Self> {
        if dims.len() != loglik.len() || dims.len() < 2 {
            return Err(Error::Usage(format!(
                "{} dimensions for {} log-likelihoods",
                dims.len(),
                loglik.len()
            )));
        }
        if n < 2 {
            return Err(Error::Validation("family fit needs n ≥ 2".into()));
        }
        let mut lr = Vec::with_capacity(loglik.len() - 1);
        for (j, &l) in loglik.iter().enumerate().skip(1) {
            if dims[j] <= dims[0] {
                return Err(Error::Validation(format!(
                    "model {j} has dimension {} but the null has {}",
                    dims[j], dims[0]
                )));
            }
            let value = 2.0 * (l - loglik[0]);
            if value < -1e-6 || !value.is_finite() {
                return Err(Error::NestingViolation { value }.in_model(j));
            }
            lr.push(value);
        }
        let log_n = (n as f64).ln();
        let aic = loglik.iter().zip(&dims).map(|(l, &m)| l - m as f64).collect();
        let bic = loglik
            .iter()
            .zip(&dims)
            .map(|(l, &m)| l - 0.5 * m as f64 * log_n)
            .collect();
        Ok(Self {
            kind,
            n,
            dims,
            loglik,
            lr,
            aic,
            bic,
        })
    }

    pub fn k(&self) -> usize {
        self.lr.len()
    }

    /// `m_j − m₀` for `j = 1..J`.
    pub fn extra_dims(&self) -> Vec<usize> {
        self.dims[1..].iter().map(|m| m - self.dims[0]).collect()
    }
}

/// Fits every model in `family` by appending the indexed `columns` to the
/// null basis and maximizing the likelihood.
pub fn fit_family(
    family: &AlternativeFamily,
    null_fit: &FittedModel,
    null: &NullSpec,
    columns: &DMatrix<f64>,
    data: &Dataset,
    glm: &dyn ExponentialFamily,
    dispersion: DispersionMode,
) -> Result<FamilyFit> {
    fit_family_models(family, null_fit, null, columns, data, glm, dispersion).map(|(_, fit)| fit)
}

/// As [`fit_family`], also returning each alternative's fit.
pub fn fit_family_models(
    family: &AlternativeFamily,
    null_fit: &FittedModel,
    null: &NullSpec,
    columns: &DMatrix<f64>,
    data: &Dataset,
    glm: &dyn ExponentialFamily,
    dispersion: DispersionMode,
) -> Result<(Vec<FittedModel>, FamilyFit)> {
    if !null_fit.converged {
        return Err(Error::Usage("null fit did not converge".into()));
    }
    if columns.ncols() < family.max_index() || columns.nrows() != data.n() {
        return Err(Error::Usage(format!(
            "direction matrix is {}×{}, family needs {} columns on {} rows",
            columns.nrows(),
            columns.ncols(),
            family.max_index(),
            data.n()
        )));
    }
    let p = null.p();
    let mut fits = Vec::with_capacity(family.len());
    for (j, set) in family.index_sets.iter().enumerate() {
        let mut basis = DMatrix::zeros(data.n(), p + set.len());
        basis.columns_mut(0, p).copy_from(null.matrix());
        for (c, &idx) in set.iter().enumerate() {
            basis.column_mut(p + c).copy_from(&columns.column(idx - 1));
        }
        let fit = fit_mle(glm, &basis, data, dispersion).map_err(|e| e.in_model(j + 1))?;
        fits.push(fit);
    }
    let mut dims = vec![null_fit.dimension];
    dims.extend(fits.iter().map(|f| f.dimension));
    let mut loglik = vec![null_fit.max_loglik];
    loglik.extend(fits.iter().map(|f| f.max_loglik));
    let summary = FamilyFit::from_logliks(family.kind, data.n(), dims, loglik)?;
    Ok((fits, summary))
}

/// Exact Gaussian shortcut for [`fit_family`] when the directions are an
/// orthonormal system built with unit weights: adding `v̂_k` lowers the
/// residual sum of squares by `n α̂_k²`.
pub fn fit_family_projected(
    family: &AlternativeFamily,
    null_fit: &FittedModel,
    system: &OrthonormalSystem,
    data: &Dataset,
    dispersion: DispersionMode,
) -> Result<FamilyFit> {
    let n = data.n();
    if system.n() != n || system.k() < family.max_index() {
        return Err(Error::Usage("orthonormal system does not match the family".into()));
    }
    if system.weights.iter().any(|&w| (w - 1.0).abs() > 1e-12) {
        return Err(Error::Usage("projection shortcut needs unit weights".into()));
    }
    let resid = &data.y - &null_fit.linear_predictor;
    let rss0 = resid.norm_squared();
    let alpha = system.values.tr_mul(&resid) / n as f64;
    let nf = n as f64;
    let loglik_of = |rss: f64| -> f64 {
        match dispersion {
            DispersionMode::Estimate => -0.5 * nf * ((2.0 * std::f64::consts::PI * rss / nf).ln() + 1.0),
            DispersionMode::Fixed(eta) => {
                -0.5 * rss / eta - 0.5 * nf * (2.0 * std::f64::consts::PI * eta).ln()
            }
        }
    };
    let m0 = null_fit.dimension;
    let mut dims = vec![m0];
    let mut loglik = vec![loglik_of(rss0)];
    for set in &family.index_sets {
        let drop: f64 = set.iter().map(|&k| nf * alpha[k - 1] * alpha[k - 1]).sum();
        let rss = (rss0 - drop).max(rss0 * 1e-300);
        dims.push(m0 + set.len());
        loglik.push(loglik_of(rss));
    }
    FamilyFit::from_logliks(family.kind, n, dims, loglik)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub criterion: Criterion,
    /// `r̂`, with 0 meaning the null model.
    pub order: usize,
    /// `ℒ_{r̂}` (zero when `r̂ = 0`).
    pub statistic: f64,
}

/// Argmax of the criterion over `j = 0..K`, ties toward the smaller order.
pub fn select_order(fit: &FamilyFit, criterion: Criterion) -> Result<OrderSelection> {
    select_order_from(fit, criterion, 0)
}

/// Argmax of the criterion over `j = 1..K`, so the null is never chosen.
/// This is the selection rule whose null laws the order-selection critical
/// values describe.
pub fn select_positive_order(fit: &FamilyFit, criterion: Criterion) -> Result<OrderSelection> {
    select_order_from(fit, criterion, 1)
}

fn select_order_from(fit: &FamilyFit, criterion: Criterion, first: usize) -> Result<OrderSelection> {
    if fit.kind != FamilyKind::Nested {
        return Err(Error::Usage("order selection needs a nested family".into()));
    }
    let values = match criterion {
        Criterion::Aic => &fit.aic,
        Criterion::Bic => &fit.bic,
    };
    let mut order = first;
    for (j, &v) in values.iter().enumerate().skip(first) {
        if v > values[order] {
            order = j;
        }
    }
    let statistic = if order == 0 { 0.0 } else { fit.lr[order - 1] };
    Ok(OrderSelection {
        criterion,
        order,
        statistic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{cosine_design, equispaced_design, orthonormalize};
    use crate::glm::Gaussian;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn ladder(lr: &[f64], n: usize) -> FamilyFit {
        let dims = (0..lr.len()).map(|j| 2 + j).collect();
        let loglik = lr.iter().map(|l| 0.5 * l - 40.0).collect();
        FamilyFit::from_logliks(FamilyKind::Nested, n, dims, loglik).unwrap()
    }

    #[test]
    fn family_index_sets() {
        let f = build_family(FamilyKind::Nested, 3).unwrap();
        assert_eq!(f.index_sets, vec![vec![1], vec![1, 2], vec![1, 2, 3]]);
        let f = build_family(FamilyKind::Singleton, 3).unwrap();
        assert_eq!(f.index_sets, vec![vec![1], vec![2], vec![3]]);
        let f = AlternativeFamily::custom(5, vec![vec![2, 5], vec![1]]).unwrap();
        assert_eq!(f.index_sets, vec![vec![2, 5], vec![1]]);
        assert_eq!(f.dims(3), vec![5, 4]);
        assert!(AlternativeFamily::custom(5, vec![vec![]]).is_err());
        assert!(AlternativeFamily::all_subsets(20, 1000).is_err());
        assert_eq!(AlternativeFamily::all_subsets(3, 1000).unwrap().len(), 7);
    }

    #[test]
    fn aic_and_bic_orders() {
        let fit = ladder(&[0.0, 5.0, 5.5], 100);
        let a = select_order(&fit, Criterion::Aic).unwrap();
        assert_eq!((a.order, a.statistic), (1, 5.0));
        let diffs: Vec<f64> = fit.bic.iter().map(|b| b - fit.bic[0]).collect();
        assert_relative_eq!(diffs[1], 0.1974, epsilon = 1e-4);
        assert_relative_eq!(diffs[2], -1.8552, epsilon = 1e-4);
        let b = select_order(&fit, Criterion::Bic).unwrap();
        assert_eq!((b.order, b.statistic), (1, 5.0));

        let zero = ladder(&[0.0, 0.0, 0.0], 100);
        assert_eq!(select_order(&zero, Criterion::Aic).unwrap().order, 0);
    }

    #[test]
    fn order_selection_needs_nested() {
        let mut fit = ladder(&[0.0, 1.0], 50);
        fit.kind = FamilyKind::Singleton;
        assert!(matches!(select_order(&fit, Criterion::Aic), Err(Error::Usage(_))));
    }

    fn example_data() -> (Dataset, NullSpec) {
        let x = equispaced_design(10);
        let y = vec![0.3, -0.2, 0.9, 1.4, 0.1, -0.7, 0.5, 1.1, 0.8, -0.4];
        (Dataset::scalar(x, y).unwrap(), NullSpec::intercept(10))
    }

    #[test]
    fn lr_matches_generic_least_squares_refit() {
        let (data, null) = example_data();
        let raw = cosine_design(3, &data.covariate(), false).unwrap();
        let null_fit = fit_mle(&Gaussian, null.matrix(), &data, DispersionMode::Estimate).unwrap();
        let family = build_family(FamilyKind::Nested, 3).unwrap();
        let fit = fit_family(&family, &null_fit, &null, &raw.values, &data, &Gaussian, DispersionMode::Estimate)
            .unwrap();
        let rss = |cols: usize| {
            let mut x = DMatrix::from_element(10, cols + 1, 1.0);
            x.columns_mut(1, cols).copy_from(&raw.values.columns(0, cols));
            let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &data.y;
            (&data.y - x * beta).norm_squared()
        };
        for j in 1..=3 {
            let expected = 10.0 * (rss(0) / rss(j)).ln();
            assert_relative_eq!(fit.lr[j - 1], expected, epsilon = 1e-8);
        }
        assert!(fit.lr[1] >= fit.lr[0] - 1e-6);
    }

    #[test]
    fn projected_shortcut_matches_refits() {
        let (data, null) = example_data();
        let raw = cosine_design(4, &data.covariate(), false).unwrap();
        let system = orthonormalize(&raw, &null, &[1.0; 10]).unwrap();
        for kind in [FamilyKind::Nested, FamilyKind::Singleton] {
            let family = build_family(kind, 4).unwrap();
            for mode in [DispersionMode::Estimate, DispersionMode::Fixed(0.3)] {
                let null_fit = fit_mle(&Gaussian, null.matrix(), &data, mode).unwrap();
                let slow = fit_family(&family, &null_fit, &null, &system.values, &data, &Gaussian, mode).unwrap();
                let fast = fit_family_projected(&family, &null_fit, &system, &data, mode).unwrap();
                for (a, b) in slow.lr.iter().zip(&fast.lr) {
                    assert_relative_eq!(a, b, epsilon = 1e-9);
                }
                assert_eq!(slow.dims, fast.dims);
            }
        }
    }

    #[test]
    fn known_variance_step_equals_scaled_score() {
        let (data, null) = example_data();
        let raw = cosine_design(3, &data.covariate(), false).unwrap();
        let system = orthonormalize(&raw, &null, &[1.0; 10]).unwrap();
        let eta = 0.5;
        let null_fit = fit_mle(&Gaussian, null.matrix(), &data, DispersionMode::Fixed(eta)).unwrap();
        let family = build_family(FamilyKind::Nested, 3).unwrap();
        let fit = fit_family(&family, &null_fit, &null, &system.values, &data, &Gaussian, DispersionMode::Fixed(eta))
            .unwrap();
        let resid: DVector<f64> = &data.y - &null_fit.linear_predictor;
        let mut prev = 0.0;
        for j in 0..3 {
            let alpha = system.values.column(j).dot(&resid) / 10.0;
            assert_relative_eq!(fit.lr[j] - prev, 10.0 * alpha * alpha / eta, epsilon = 1e-6);
            prev = fit.lr[j];
        }
    }

    #[test]
    fn zero_column_is_a_rank_error() {
        let (data, null) = example_data();
        let cols = DMatrix::zeros(10, 1);
        let null_fit = fit_mle(&Gaussian, null.matrix(), &data, DispersionMode::Estimate).unwrap();
        let family = build_family(FamilyKind::Singleton, 1).unwrap();
        let err = fit_family(&family, &null_fit, &null, &cols, &data, &Gaussian, DispersionMode::Estimate)
            .unwrap_err();
        match err {
            Error::ModelFit { model: 1, source } => {
                assert!(matches!(*source, Error::RankDeficient { .. }))
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn selection_is_shift_invariant_and_bic_is_sparser() {
        let fit = ladder(&[0.0, 3.0, 9.0, 9.5, 14.0], 200);
        let mut shifted = fit.clone();
        for v in shifted.aic.iter_mut().chain(shifted.bic.iter_mut()) {
            *v += 123.0;
        }
        for c in [Criterion::Aic, Criterion::Bic] {
            assert_eq!(select_order(&fit, c).unwrap(), select_order(&shifted, c).unwrap());
        }
        assert!(
            select_order(&fit, Criterion::Bic).unwrap().order
                <= select_order(&fit, Criterion::Aic).unwrap().order
        );
    }
}
