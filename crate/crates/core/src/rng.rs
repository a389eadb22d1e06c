//! Seeded random streams.
//!
//! Every random decision in the crate comes from a [`ChaCha8Rng`] built by
//! [`rng_from_seed`]. Sub-streams (one per run, per increment, per trial) get
//! their own seed through [`derive_seed`], so results never depend on the
//! order in which independent work is scheduled.
//!
//! The synthetic generator draws only through [`uniform01`] and
//! [`standard_normal`], whose constructions are fixed here:
//!
//! * `uniform01`: top 53 bits of `next_u64`, scaled by 2^-53, giving `[0, 1)`.
//! * `standard_normal`: Box-Muller with `u1 = 1 - uniform01()` and
//!   `u2 = uniform01()`, returning `sqrt(-2 ln u1) * cos(2 pi u2)`. The sine
//!   branch is discarded so each normal consumes exactly two `u64`s.
//!
//! `ChaCha8Rng::seed_from_u64` expands the 64-bit seed with PCG32 as
//! documented by `rand_core`, which makes the whole chain reproducible from
//! any language with a ChaCha8 implementation.

pub use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `base`. Distinct streams of the same base
/// (and the same stream of distinct bases) give unrelated seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Uniform index in `0..len` by rejection, `len > 0`.
pub fn index<R: RngCore + ?Sized>(rng: &mut R, len: usize) -> usize {
    debug_assert!(len > 0);
    let len = len as u64;
    let zone = u64::MAX - (u64::MAX % len);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % len) as usize;
        }
    }
}

/// Fisher-Yates, walking from the back.
pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = rng_from_seed(3);
        for _ in 0..10_000 {
            let u = uniform01(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = rng_from_seed(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = rng_from_seed(0);
        let mut v: Vec<usize> = (0..50).collect();
        shuffle(&mut rng, &mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
