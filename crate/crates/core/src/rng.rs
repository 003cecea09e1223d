//! Counter-based random streams.
//!
//! Every experiment draws from a ChaCha8 keystream whose key is expanded from
//! the user seed and whose 64-bit stream id is addressed by a small tuple of
//! counters (experiment lane, particle count, replication). Two streams with
//! different addresses never overlap, and adding replications never changes
//! the numbers seen by earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Fixed lanes so that different experiment kinds never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Particles = 1,
    LimitSampler = 2,
    Initial = 3,
    Test = 0xff,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splittable handle: a seed plus a lane; streams are addressed by
/// `(major, minor)` counters, e.g. `(N, replication)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    seed: u64,
    lane: Lane,
}

impl SeedSplitter {
    pub fn new(seed: u64, lane: Lane) -> Self {
        Self { seed, lane }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, major: u64, minor: u64) -> StreamRng {
        let mut state = self.seed ^ (self.lane as u64).rotate_left(48) ^ major.wrapping_mul(0xd6e8_feb8_6659_fd93);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(minor);
        rng
    }
}

/// Convenience for single-stream callers.
pub fn seeded(seed: u64) -> StreamRng {
    SeedSplitter::new(seed, Lane::Test).stream(0, 0)
}
