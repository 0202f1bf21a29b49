//! Space-filling designs in the unit cube.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Latin-hypercube sample of `n` points: each axis is cut into `n` strata and
/// every stratum holds exactly one point, placed uniformly within it.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(&mut rng);
        for (i, &stratum) in perm.iter().enumerate() {
            points[i][d] = (stratum as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u32) -> f64 {
    let b = b as u64;
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// First `n` Halton points (skipping the origin) under a seeded random shift
/// modulo 1, so different seeds give different but equally uniform sets.
///
/// Panics if `dim` exceeds the number of tabulated prime bases (12).
pub fn shifted_halton(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sequence supports at most {} dimensions", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    (1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}
