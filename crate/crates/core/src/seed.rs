//! Deterministic seed derivation.
//!
//! Every random stream is keyed by `(master, stage, trajectory, chain)` so that
//! a trajectory or detector chain can be regenerated in isolation, in any
//! order and on any number of threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Random generator used for all simulation streams.
pub type SimRng = Xoshiro256PlusPlus;

/// Stream identifiers mixed into child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Bath = 1,
    Dynamics = 2,
    Amplitude = 3,
    DetectorNoise = 4,
    Scan = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `(master, stage, trajectory, chain)` into a child seed.
pub fn child_seed(master: u64, stage: Stage, trajectory: u64, chain: u64) -> u64 {
    let mut h = splitmix64(master);
    for word in [stage as u64, trajectory, chain] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, stage: Stage, trajectory: u64, chain: u64) -> SimRng {
    rng_from_seed(child_seed(master, stage, trajectory, chain))
}
