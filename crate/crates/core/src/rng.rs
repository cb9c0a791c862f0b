//! Counter-based random streams.
//!
//! Every simulated quantity is addressed by `(seed, domain, index)`. The
//! index selects a ChaCha stream, so a replicate's draws depend only on its
//! own address and never on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Replicates per stream when a Monte Carlo sample is generated in blocks.
pub const BLOCK_LEN: usize = 1024;

/// Stream domains, so different consumers of one user seed never overlap.
pub mod domain {
    pub const LAW: u64 = 0x4c41_5700;
    pub const DATA: u64 = 0x4441_5441;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const STABLE: u64 = 0x5354_4142;
    pub const STAR: u64 = 0x5354_4152;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for stream `index` of `(seed, domain)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(domain)));
    rng.set_stream(index);
    rng
}

#[inline]
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// χ² draw with `df` degrees of freedom as a sum of squared normals.
#[inline]
pub fn chi_square<R: rand::Rng + ?Sized>(rng: &mut R, df: usize) -> f64 {
    (0..df)
        .map(|_| {
            let z = standard_normal(rng);
            z * z
        })
        .sum()
}

/// Evaluates `draw` for `reps` replicates in fixed-size blocks, one stream
/// per block. The result is ordered by replicate index and is identical for
/// any number of worker threads.
pub fn blocked_sample<T, F>(reps: usize, seed: u64, domain: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let blocks = reps.div_ceil(BLOCK_LEN);
    let chunks: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, domain, b as u64);
            let len = BLOCK_LEN.min(reps - b * BLOCK_LEN);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Evaluates `f(index, rng)` with one stream per replicate.
pub fn per_replicate<T, F>(reps: usize, seed: u64, domain: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, domain, r as u64);
            f(r, &mut rng)
        })
        .collect()
}
