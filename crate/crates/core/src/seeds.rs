//! Seed derivation.
//!
//! Every random stream in the crate descends from one user seed. Sub-streams
//! for distinct purposes are derived by hashing `(seed, purpose)`, and
//! Monte-Carlo trials use `seed ^ trial_index`, so results never depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for a named purpose. Stable across platforms and releases.
pub fn derive(seed: u64, purpose: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in purpose.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Seed of the `index`-th Monte-Carlo trial.
pub fn trial(seed: u64, index: u64) -> u64 {
    seed ^ index
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
