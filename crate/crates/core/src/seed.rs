//! Seed derivation for reproducible replications.
//!
//! Replication `i` of a run with master seed `m` uses `m ^ i`, so results do
//! not depend on which worker picked up which replication. Independent
//! sub-streams inside one replication (data, frequencies, permutations) are
//! separated with a splitmix64 finalizer over a fixed lane tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane tags for sub-streams of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Data = 1,
    Features = 2,
    Permutation = 3,
    Pilot = 4,
}

pub type Rng = ChaCha8Rng;

pub fn replication_seed(master: u64, index: u64) -> u64 {
    master ^ index
}

pub fn lane_seed(seed: u64, lane: Lane) -> u64 {
    splitmix64(seed ^ (lane as u64).wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
