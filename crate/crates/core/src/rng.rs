//! Splittable seeded random streams.
//!
//! Every random draw in the crate comes from a stream derived from a root
//! seed and a path of integer tags (epoch, batch, row, ...). Streams for
//! different paths are independent, so the order in which they are created
//! never changes the numbers any of them yield.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the stream identified by `path` under `root`.
pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    let mut state = root;
    let mut acc = splitmix64(&mut state);
    for &tag in path {
        state ^= acc.rotate_left(17) ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
        acc = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream tags used by the trainers and generators.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const PLAN: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const ROW: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const SPLIT: u64 = 7;
}
