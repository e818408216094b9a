//! Seeded random streams and categorical sampling shared by every sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws an index from an (already normalized) probability slice by inverse CDF.
/// Mass lost to rounding falls on the last index with positive probability.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
