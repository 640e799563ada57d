//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream tags, so that no two consumers share a stream by accident.
pub(crate) mod streams {
    pub const CLIENT_INIT: u64 = 1 << 32;
    pub const SPLIT: u64 = 2 << 32;
    pub const GLOBAL_INIT: u64 = 3 << 32;
    pub const EDGE_NOISE: u64 = 4 << 32;
    pub const KNN_PROJECTION: u64 = 5 << 32;
    pub const PLANTED_PERMUTATION: u64 = 6 << 32;
    pub const DATA: u64 = 7 << 32;
    pub const BATCH_ORDER: u64 = 8 << 32;
}
