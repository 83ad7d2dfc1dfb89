//! Deterministic RNG stream derivation. Every random draw in the crate
//! comes from a ChaCha stream keyed by a master seed plus a path of indices
//! (dataset index, training step, candidate index, ...), so runs reproduce
//! bit-identically and per-item streams are independent of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xA24B_AED4_963E_E407);
        let _ = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
