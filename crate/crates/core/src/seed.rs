//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(base seed, stage, indices...)`
//! so that jobs can be scheduled in any order, on any number of threads, and
//! still draw the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags keep the streams of different pipeline steps disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Imputation = 1,
    Bootstrap = 2,
    CandidatesInit = 3,
    CandidatesStability = 4,
    Inference = 5,
    Generator = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stage tag and an arbitrary index path.
pub fn derive_seed(base: u64, stage: Stage, path: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stage as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn rng_for(base: u64, stage: Stage, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stage, path))
}
