//! Reproducible random streams.
//!
//! A [`Seed`] names a ChaCha20 key (`value`) and a stream (`stream_id`).
//! Parallel work is cut into fixed-size blocks and each block seeks to its own
//! word offset, so the draws depend only on the seed and the block layout,
//! never on which worker ran which block.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub value: u64,
    pub stream_id: u64,
}

/// SplitMix64 finaliser, used to spread derived stream ids.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed { value, stream_id: 0 }
    }

    pub fn with_stream(value: u64, stream_id: u64) -> Self {
        Seed { value, stream_id }
    }

    /// A seed on a different stream, deterministically derived from `tag`.
    pub fn derive(&self, tag: u64) -> Seed {
        Seed {
            value: self.value,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(1))),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.value);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Generator positioned at the start of block `block` when every block
    /// consumes `words_per_block` 32-bit words.
    pub fn rng_at_block(&self, block: u64, words_per_block: u64) -> ChaCha20Rng {
        let mut rng = self.rng();
        rng.set_word_pos(block as u128 * words_per_block as u128);
        rng
    }
}

impl Default for Seed {
    fn default() -> Self {
        Seed::new(0)
    }
}
