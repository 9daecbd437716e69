//! Seeded random streams. All randomness in a run flows from one root seed
//! through named sub-streams (split, shuffle, init, dropout, ...), so data
//! order and dropout noise are independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used everywhere in the toolkit.
pub type Rng = ChaCha8Rng;

/// Derives the sub-seed for a named stream from a root seed.
fn stream_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the root via splitmix64.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(root ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Named random streams derived from one root seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub root: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Seeds {
        Seeds { root }
    }

    pub fn stream(&self, name: &str) -> Rng {
        Rng::seed_from_u64(stream_seed(self.root, name))
    }

    pub fn split(&self) -> Rng {
        self.stream("split")
    }

    pub fn shuffle(&self) -> Rng {
        self.stream("shuffle")
    }

    pub fn init(&self) -> Rng {
        self.stream("init")
    }

    pub fn dropout(&self) -> Rng {
        self.stream("dropout")
    }

    /// Root seed for the i-th repeat of an ablation (independent runs).
    pub fn repeat(&self, index: usize) -> Seeds {
        Seeds::new(splitmix64(self.root.wrapping_add(index as u64 + 1)))
    }

    /// Child seed family for a named sub-protocol (e.g. a nested split),
    /// keeping its streams independent of the parent's.
    pub fn derive(&self, name: &str) -> Seeds {
        Seeds::new(stream_seed(self.root, name))
    }
}
