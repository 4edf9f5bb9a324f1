//! Seed derivation for reproducible experiment streams.
//!
//! Replicates, folds, and grid points each get their own RNG stream derived
//! from (master seed, indices), so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with stream coordinates into a single 64-bit seed.
pub fn mix_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix(master);
    for &p in parts {
        state = splitmix(state ^ p.wrapping_mul(0xd134_2543_de82_ef95));
    }
    state
}

/// Deterministic RNG for the given stream coordinates.
pub fn stream_rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, parts))
}
