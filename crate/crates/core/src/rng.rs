//! Seeded, splittable random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 stream keyed by a
//! `(seed, stream)` pair, so independent tasks (folds, replications,
//! Monte-Carlo truth runs) never share state and can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id used for fold assignment.
pub const STREAM_FOLDS: u64 = 0xF01D;
/// Base stream id for simulated datasets; the replication index is added.
pub const STREAM_DATA: u64 = 1 << 32;
/// Base stream id for Monte-Carlo ground truth; the replication index is added.
pub const STREAM_TRUTH: u64 = 2 << 32;
/// Base stream id for oracle instance generation.
pub const STREAM_ORACLE: u64 = 3 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
