//! Seeded random streams.
//!
//! All randomness flows from explicit `u64` seeds. Independent streams
//! (per trial, per slice, per coil) are derived by mixing the base seed with
//! a stream tag, so results never depend on scheduling order.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SmileRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for stream `tag` of `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ mix(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_from(seed: u64, tag: u64) -> SmileRng {
    SmileRng::seed_from_u64(derive_seed(seed, tag))
}

/// Circularly-symmetric complex Gaussian sample with `E|z|^2 = sigma^2`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Complex64 {
    let s = sigma / std::f64::consts::SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

pub fn complex_normal_array2<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), sigma: f64) -> Array2<Complex64> {
    Array2::from_shape_simple_fn(shape, || complex_normal(rng, sigma))
}
