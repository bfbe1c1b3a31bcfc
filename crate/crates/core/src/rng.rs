//! Splittable, counter-based seeding.
//!
//! Every random draw in the crate comes from a generator keyed by
//! `(master seed, operation tag, index)`. The key is hashed into a ChaCha8
//! seed, so the stream for replicate 17 is the same whether it is evaluated
//! first, last, or on another thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedTree(u64);

impl SeedTree {
    pub const fn new(master: u64) -> Self {
        SeedTree(master)
    }

    pub const fn master(self) -> u64 {
        self.0
    }

    /// A derived tree, independent of every other `(tag, index)` child.
    pub fn child(self, tag: &str, index: u64) -> SeedTree {
        SeedTree(key(self.0, tag, index))
    }

    pub fn rng(self, tag: &str, index: u64) -> Rng {
        let mut state = key(self.0, tag, index);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn key(master: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a(tag.as_bytes()));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
