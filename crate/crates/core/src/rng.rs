//! Keyed random streams.
//!
//! A [`RngStream`] is a seed plus a path of integer keys. Two streams with the
//! same seed and path produce identical sequences; distinct paths select
//! distinct ChaCha streams. Estimators key their draws by
//! `(run, ratio index, sample index)` so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Derive the sub-stream with `key` appended to the path.
    pub fn child(&self, key: u64) -> Self {
        let mut path = self.path.clone();
        path.push(key);
        Self { seed: self.seed, path }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng
    }

    fn stream_id(&self) -> u64 {
        // Length is mixed in so that [] and [0] differ.
        let mut h = splitmix64(self.path.len() as u64 ^ 0x5851_f42d_4c95_7f2d);
        for &k in &self.path {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        h
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
