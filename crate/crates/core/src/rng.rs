//! Seed derivation and random draws.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by
//! `(seed, purpose, index)`, so a trial's contexts, reward noise, and
//! exploration noise for round `t` do not depend on what other rounds drew.
//! That keeps greedy and exploring runs coupled on shared randomness.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

/// Name and version of the generator, recorded in output metadata.
pub const PRNG_NAME: &str = "rand_chacha-0.9/ChaCha8Rng";

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: `splitmix64(master ⊕ trial_index)`.
pub fn trial_seed(master: u64, trial_index: u64) -> u64 {
    splitmix64(master ^ trial_index)
}

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Contexts = 0x01,
    RewardNoise = 0x02,
    InitAction = 0x03,
    Exploration = 0x04,
    Fallback = 0x05,
    Construction = 0x06,
    Clairvoyant = 0x07,
}

/// Reproducible generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (purpose as u64).rotate_left(56)));
    rng.set_stream(index);
    rng
}

pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

pub fn normal_vector<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| normal::<T, _>(rng))
}

pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.random::<f64>())
}

/// Uniform direction on the unit sphere in `R^n`.
pub fn unit_vector<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    loop {
        let v = normal_vector::<T, _>(rng, n);
        let norm = v.norm();
        if norm > T::lit(1e-12) {
            return v / norm;
        }
    }
}

/// Uniform point in the unit ball: uniform direction times `U^{1/n}`.
pub fn ball_point<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    let dir = unit_vector::<T, _>(rng, n);
    let radius = rng.random::<f64>().powf(1.0 / n as f64);
    dir * T::lit(radius)
}
