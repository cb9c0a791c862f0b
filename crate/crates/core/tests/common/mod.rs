#![allow(dead_code)]

use nalgebra::DMatrix;
use pibic::glm::family_by_name;
use pibic::{cosine_design, fit_mle, null_weights, orthonormalize, Dataset, DispersionMode, NullSpec, OrthonormalSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random design, family fit and orthonormal system.
pub struct RandomSystem {
    pub null: NullSpec,
    pub raw: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub system: OrthonormalSystem,
}

/// Draws a design on [0, 1], responses from `family` around a smooth mean,
/// fits a polynomial null of `degree` and orthonormalizes `k` cosines under
/// the fitted weights. `None` when the null fit fails (e.g. separation).
pub fn random_system(family: &str, n: usize, k: usize, degree: usize, seed: u64) -> Option<RandomSystem> {
    let glm = family_by_name(family).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    x.sort_by(f64::total_cmp);
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let t = match family {
                "poisson" => 1.0 + 0.5 * xi,
                "bernoulli" => 0.8 * (xi - 0.5),
                _ => 2.0 * xi,
            };
            glm.sample(t, 0.5, &mut rng)
        })
        .collect::<pibic::Result<_>>()
        .ok()?;
    let data = Dataset::scalar(x.clone(), y).ok()?;
    let null = NullSpec::polynomial(&x, degree).ok()?;
    let fit = fit_mle(glm.as_ref(), null.matrix(), &data, DispersionMode::Estimate).ok()?;
    let weights = null_weights(glm.as_ref(), &fit);
    let raw = cosine_design(k, &x, false).ok()?;
    let system = orthonormalize(&raw, &null, &weights).ok()?;
    Some(RandomSystem {
        null,
        raw: raw.values,
        weights,
        system,
    })
}

/// Directions from a Householder QR of `W^{1/2}[Γ | U]`: column `p + j` of
/// `Q`, unweighted and scaled to `(1/n) Σ w v² = 1`.
pub fn weighted_qr_directions(null: &DMatrix<f64>, raw: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = raw.nrows();
    let p = null.ncols();
    let k = raw.ncols();
    let mut a = DMatrix::zeros(n, p + k);
    a.columns_mut(0, p).copy_from(null);
    a.columns_mut(p, k).copy_from(raw);
    for i in 0..n {
        a.row_mut(i).scale_mut(weights[i].sqrt());
    }
    let q = a.qr().q();
    DMatrix::from_fn(n, k, |i, j| (n as f64).sqrt() * q[(i, p + j)] / weights[i].sqrt())
}

/// Largest entrywise gap between `a` and `b` after matching column signs.
pub fn max_gap_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (ca, cb) in a.column_iter().zip(b.column_iter()) {
        let sign = if ca.dot(&cb) < 0.0 { -1.0 } else { 1.0 };
        worst = worst.max((ca - cb * sign).amax());
    }
    worst
}
