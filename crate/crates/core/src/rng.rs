//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. Ensembles derive one
//! independent ChaCha stream per run from `(master_seed, run_index)`, so the
//! output of run `k` never depends on how many workers executed the ensemble.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Generator seeded from a single integer.
pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `index` of the family rooted at `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Stream `index` of a family that is independent of the plain
/// `stream(master_seed, _)` family; `domain` separates uses of one seed.
pub fn substream(master_seed: u64, domain: u64, index: u64) -> SimRng {
    stream(master_seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15), index)
}
