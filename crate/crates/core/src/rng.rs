//! Counter-based random streams.
//!
//! Every Monte Carlo sample owns a stream `(seed, index)`, so results do not
//! depend on how work is split between threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream index for a two-level counter (e.g. point, sample).
pub fn pair_index(outer: u64, inner: u64) -> u64 {
    (outer << 32) ^ inner
}

#[inline]
pub fn angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>() * TAU
}

pub fn fill_angles<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = angle(rng);
    }
}
