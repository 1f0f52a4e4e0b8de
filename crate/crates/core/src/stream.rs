//! Counter-based random streams.
//!
//! Every Monte Carlo trial draws from its own ChaCha8 stream selected by
//! `(key, trial index)`, so results do not depend on how trials are
//! partitioned across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices (e.g. sweep point) into a new key.
pub fn derive_key(master_seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master_seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// The random stream for trial `index` under `key`.
pub fn trial_rng(key: u64, index: u64) -> TrialRng {
    let mut seed = [0u8; 32];
    let mut state = key;
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}
