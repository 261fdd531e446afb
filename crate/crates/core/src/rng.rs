//! Deterministic per-trial random streams.
//!
//! Every trial gets its own generator keyed by `(seed, path...)`, so results
//! do not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `seed` and an index path such as
/// `[cell_index, trial_index]`.
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(GOLDEN) ^ key;
        key = splitmix64(&mut state);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
