//! Deterministic random-stream derivation.
//!
//! Every random decision in the toolkit (parameter init, shuffles, dropout
//! masks, synthetic rendering, mock OCR corruption) draws from a ChaCha
//! stream derived from the root seed plus a purpose tag, so parallel and
//! serial execution produce identical results and any artifact can be
//! replayed from its echoed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from a root seed and a purpose tag.
///
/// Distinct tags yield statistically independent streams; the same
/// `(seed, tag)` pair always yields the same stream.
pub fn derive(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a64(tag.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
