//! Deterministic random sources.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng`, whose output
//! stream is stable across platforms and crate versions. Independent streams
//! (per batch element, per epoch) are derived by hashing the base seed with a
//! tag path so results do not depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Float;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream addressed by `path` under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn child(seed: u64, path: &[u64]) -> Rng {
    seeded(derive_seed(seed, path))
}

pub fn normal<F: Float, R: rand::Rng + ?Sized>(rng: &mut R) -> F {
    let z: f64 = StandardNormal.sample(rng);
    F::of(z)
}

pub fn fill_normal<F: Float, R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [F]) {
    out.iter_mut().for_each(|v| *v = normal(rng));
}
