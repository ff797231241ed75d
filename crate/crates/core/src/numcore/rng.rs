//! Seeded, named random substreams.
//!
//! Every consumer (initialization, dropout, shuffling, data generation)
//! asks for its own stream by name. A stream's key is derived from the
//! root seed and the name only, so adding a consumer never shifts the
//! numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 32-byte ChaCha key for the stream `name` under `seed`.
fn stream_key(seed: u64, name: &str) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed) ^ fnv1a(name.as_bytes());
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Counter-based generator for the named substream of `seed`.
pub fn substream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::from_seed(stream_key(seed, name))
}
