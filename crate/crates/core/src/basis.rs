//! Raw alternative-direction bases and their weighted orthonormalization.
//!
//! A raw basis holds `u_j(x_i)` with every column scaled to unit mean
//! square. [`orthonormalize`] turns it into directions `v̂_j` that are
//! orthogonal to the null functions and orthonormal among themselves under
//! the null-fit weights `w_i = b″(g(x_i; θ̂₀))`:
//!
//! ```text
//! Σ_i w_i v̂_j(x_i) γ_k(x_i) = 0,      (1/n) Σ_i w_i v̂_j(x_i) v̂_k(x_i) = δ_jk
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{ExponentialFamily, FittedModel, NullSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Cosine,
    Legendre,
    Custom,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "legendre" => Ok(Self::Legendre),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Usage(format!("unknown basis `{other}`"))),
        }
    }
}

/// Columns `u_1..u_K` evaluated on the design.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: BasisKind,
    /// `n × K`, entry `(i, j)` is `u_{j+1}(x_i)`.
    pub values: DMatrix<f64>,
    /// Largest absolute entry, `B_K`.
    pub sup_bound: f64,
}

impl BasisSet {
    /// Wraps user-supplied columns, rescaling each to unit mean square.
    pub fn custom(values: DMatrix<f64>) -> Result<Self> {
        Self::from_columns(BasisKind::Custom, values)
    }

    fn from_columns(kind: BasisKind, mut values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows() as f64;
        for (j, mut col) in values.column_iter_mut().enumerate() {
            let ms = col.norm_squared() / n;
            if !(ms > 0.0 && ms.is_finite()) {
                return Err(Error::RankDeficient {
                    matrix: "alternative basis",
                    column: j + 1,
                });
            }
            col /= ms.sqrt();
        }
        let sup_bound = values.amax();
        Ok(Self {
            kind,
            values,
            sup_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    /// `(1/n) AᵀA`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.values.tr_mul(&self.values) / self.n() as f64
    }
}

/// The equispaced design `x_i = (i − ½)/n`.
pub fn equispaced_design(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect()
}

/// Columns `cos(πkx)` for `k = 1..K` (preceded by the constant when
/// `include_constant`), each scaled to unit mean square on the design.
pub fn cosine_design(k: usize, design: &[f64], include_constant: bool) -> Result<BasisSet> {
    if k == 0 && !include_constant {
        return Err(Error::Validation("cosine basis needs K ≥ 1".into()));
    }
    if let Some(i) = design.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::ObservationDomain {
            index: i,
            reason: format!("covariate {} outside [0, 1]", design[i]),
        });
    }
    let offset = usize::from(!include_constant);
    let cols = k + usize::from(include_constant);
    let raw = DMatrix::from_fn(design.len(), cols, |i, j| {
        (PI * (j + offset) as f64 * design[i]).cos()
    });
    BasisSet::from_columns(BasisKind::Cosine, raw)
}

/// Unweighted modified Gram–Schmidt with one reorthogonalization pass.
/// Columns come out with unit mean square.
fn gram_schmidt_columns(mut m: DMatrix<f64>, weights: &[f64], what: &'static str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(weights).map(|((x, y), w)| w * x * y).sum::<f64>() / n as f64
    };
    for j in 0..m.ncols() {
        let original = inner(m.column(j).as_slice(), m.column(j).as_slice()).sqrt();
        for _pass in 0..2 {
            for k in 0..j {
                let proj = inner(m.column(k).as_slice(), m.column(j).as_slice());
                let qk = m.column(k).clone_owned();
                m.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let norm = inner(m.column(j).as_slice(), m.column(j).as_slice()).sqrt();
        if !(norm > 1e-10 * original) || original == 0.0 {
            return Err(Error::RankDeficient { matrix: what, column: j });
        }
        m.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(m)
}

/// Normalized Legendre polynomials of degrees `1..K` on the design
/// `x_i = (i − ½)/n`, mapped from `[1/(2n), 1 − 1/(2n)]` onto `[−1, 1]` and
/// made exactly orthogonal to lower degrees (and the constant) on the
/// design.
pub fn legendre_design(k: usize, n: usize) -> Result<BasisSet> {
    if k == 0 {
        return Err(Error::Validation("Legendre basis needs K ≥ 1".into()));
    }
    if k >= n {
        return Err(Error::RankDeficient {
            matrix: "Legendre basis",
            column: n,
        });
    }
    let design = equispaced_design(n);
    let (lo, hi) = (0.5 / n as f64, 1.0 - 0.5 / n as f64);
    let mut raw = DMatrix::zeros(n, k + 1);
    for (i, &x) in design.iter().enumerate() {
        let t = if n == 1 { 0.0 } else { 2.0 * (x - lo) / (hi - lo) - 1.0 };
        let (mut prev, mut cur) = (1.0, t);
        raw[(i, 0)] = 1.0;
        raw[(i, 1)] = t;
        for d in 2..=k {
            let next = ((2 * d - 1) as f64 * t * cur - (d - 1) as f64 * prev) / d as f64;
            prev = cur;
            cur = next;
            raw[(i, d)] = cur;
        }
    }
    let ones = vec![1.0; n];
    let ortho = gram_schmidt_columns(raw, &ones, "Legendre basis")?;
    BasisSet::from_columns(BasisKind::Legendre, ortho.columns(1, k).into_owned())
}

/// Directions `v̂_1..v̂_K` satisfying the weighted orthogonality conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalSystem {
    /// `n × K`, entry `(i, j)` is `v̂_{j+1}(x_i)`.
    pub values: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub basis_kind: BasisKind,
    /// Number of null functions the system was orthogonalized against.
    pub null_dim: usize,
}

impl OrthonormalSystem {
    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Largest `|Σ_i w_i v̂_j γ_k|` over all `(j, k)`.
    pub fn null_orthogonality_residual(&self, null: &NullSpec) -> f64 {
        let mut worst = 0.0f64;
        for v in self.values.column_iter() {
            for g in null.matrix().column_iter() {
                let s: f64 = (0..self.n()).map(|i| self.weights[i] * v[i] * g[i]).sum();
                worst = worst.max(s.abs());
            }
        }
        worst
    }

    /// Largest `|(1/n) Σ_i w_i v̂_j v̂_k − δ_jk|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.n() as f64;
        let mut worst = 0.0f64;
        for j in 0..self.k() {
            for k in 0..=j {
                let s: f64 = (0..self.n())
                    .map(|i| self.weights[i] * self.values[(i, j)] * self.values[(i, k)])
                    .sum::<f64>()
                    / n;
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Null-fit weights `w_i = b″(g(x_i; θ̂₀))`.
pub fn null_weights(family: &dyn ExponentialFamily, null_fit: &FittedModel) -> Vec<f64> {
    null_fit
        .linear_predictor
        .iter()
        .map(|&t| family.cumulant_d2(t))
        .collect()
}

/// Weighted Gram–Schmidt of `[γ_1..γ_p | u_1..u_K]`, keeping the `u` part.
///
/// Each output column is a linear combination of the null functions and
/// `u_1..u_j` with a positive coefficient on `u_j`.
pub fn orthonormalize(raw: &BasisSet, null: &NullSpec, weights: &[f64]) -> Result<OrthonormalSystem> {
    let n = raw.n();
    if null.matrix().nrows() != n || weights.len() != n {
        return Err(Error::Usage(format!(
            "basis has {n} rows, null basis {} and weights {}",
            null.matrix().nrows(),
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::ObservationDomain {
            index: i,
            reason: format!("weight {} is not positive", weights[i]),
        });
    }
    let p = null.p();
    let mut stacked = DMatrix::zeros(n, p + raw.k());
    stacked.columns_mut(0, p).copy_from(null.matrix());
    stacked.columns_mut(p, raw.k()).copy_from(&raw.values);
    let ortho = gram_schmidt_columns(stacked, weights, "stacked null/alternative basis").map_err(
        |e| match e {
            // Report alternative columns by their 1-based index j.
            Error::RankDeficient { column, .. } if column >= p => Error::RankDeficient {
                matrix: "alternative basis",
                column: column - p + 1,
            },
            Error::RankDeficient { column, .. } => Error::RankDeficient {
                matrix: "null basis",
                column,
            },
            other => other,
        },
    )?;
    Ok(OrthonormalSystem {
        values: ortho.columns(p, raw.k()).into_owned(),
        weights: DVector::from_column_slice(weights),
        basis_kind: raw.kind,
        null_dim: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_constant_and_endpoint_symmetry() {
        let design = [0.0, 0.25, 0.5, 0.75, 1.0];
        let b = cosine_design(1, &design, true).unwrap();
        assert!(b.values.column(0).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let c1 = b.values.column(1);
        assert!(c1[0] > 0.0);
        assert_relative_eq!(c1[0], -c1[4], epsilon = 1e-14);
    }

    #[test]
    fn cosine_discrete_orthogonality_on_midpoints() {
        let design = equispaced_design(100);
        let raw = DMatrix::from_fn(100, 10, |i, j| (PI * (j + 1) as f64 * design[i]).cos());
        let gram = raw.tr_mul(&raw) / 100.0;
        for j in 0..10 {
            for k in 0..10 {
                if j != k {
                    assert!(gram[(j, k)].abs() < 1e-10, "({j},{k}) = {}", gram[(j, k)]);
                }
            }
        }
        let b = cosine_design(10, &design, false).unwrap();
        for j in 0..10 {
            assert_relative_eq!(b.gram()[(j, j)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_rejects_out_of_range() {
        let err = cosine_design(2, &[0.2, 1.5], false).unwrap_err();
        assert!(matches!(err, Error::ObservationDomain { index: 1, .. }));
    }

    #[test]
    fn legendre_degree_one_on_four_points() {
        let b = legendre_design(1, 4).unwrap();
        let expected = [-1.341_640_786_5, -0.447_213_595_5, 0.447_213_595_5, 1.341_640_786_5];
        for (v, e) in b.values.column(0).iter().zip(expected) {
            assert_relative_eq!(*v, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn legendre_normalization_and_orthogonality() {
        let b = legendre_design(12, 100).unwrap();
        let gram = b.gram();
        for j in 0..12 {
            assert_relative_eq!(gram[(j, j)], 1.0, epsilon = 1e-10);
            let mean: f64 = b.values.column(j).sum() / 100.0;
            assert!(mean.abs() < 1e-10);
        }
        // Degree 2 against the constant and degree 1.
        assert!(gram[(0, 1)].abs() < 1e-10);
        assert!(legendre_design(5, 5).is_err());
    }

    #[test]
    fn legendre_tracks_the_continuous_polynomials() {
        // Discrete orthogonalization should barely move the columns for
        // moderate degree: compare with the analytically normalized P_2.
        let n = 2000;
        let b = legendre_design(2, n).unwrap();
        let design = equispaced_design(n);
        let (lo, hi) = (0.5 / n as f64, 1.0 - 0.5 / n as f64);
        for (i, &x) in design.iter().enumerate().step_by(97) {
            let t = 2.0 * (x - lo) / (hi - lo) - 1.0;
            let p2 = 5f64.sqrt() * 0.5 * (3.0 * t * t - 1.0);
            assert!((b.values[(i, 1)] - p2).abs() < 0.01);
        }
    }

    #[test]
    fn sup_bounds_grow_as_expected() {
        let n = 400;
        let design = equispaced_design(n);
        let mut ratios = Vec::new();
        for k in 2..=30 {
            let c = cosine_design(k, &design, false).unwrap();
            assert!(c.sup_bound <= 2f64.sqrt() + 1e-9);
            let l = legendre_design(k, n).unwrap();
            ratios.push(l.sup_bound / (k as f64).sqrt());
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(max < 2.0, "B_K/√K peaked at {max}");
    }

    #[test]
    fn orthonormalize_unit_weights_matches_legendre() {
        let null = NullSpec::intercept(4);
        let raw = BasisSet::custom(DMatrix::from_column_slice(4, 1, &equispaced_design(4))).unwrap();
        let sys = orthonormalize(&raw, &null, &[1.0; 4]).unwrap();
        let expected = [-1.341_640_786_5, -0.447_213_595_5, 0.447_213_595_5, 1.341_640_786_5];
        for (v, e) in sys.values.column(0).iter().zip(expected) {
            assert_relative_eq!(*v, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn orthonormalize_reports_rank_and_weights() {
        let null = NullSpec::intercept(5);
        let cols = DMatrix::from_fn(5, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 + 1.0 });
        let raw = BasisSet::custom(cols).unwrap();
        let err = orthonormalize(&raw, &null, &[1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { column: 2, .. }), "{err}");

        let raw = cosine_design(2, &equispaced_design(5), false).unwrap();
        let err = orthonormalize(&raw, &null, &[1.0, 1.0, 0.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::ObservationDomain { index: 2, .. }));
    }
}
