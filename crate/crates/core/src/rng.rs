//! Seed derivation. Every random stream in a run is a ChaCha8 generator keyed
//! by the experiment seed plus a fixed list of stream identifiers, so streams
//! never depend on the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN_DATA: u64 = 2;
pub const STREAM_TEST_DATA: u64 = 3;
pub const STREAM_PARTITION: u64 = 4;
pub const STREAM_SHARE: u64 = 5;
pub const STREAM_EPOCH: u64 = 6;
pub const STREAM_SAMPLING: u64 = 7;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}
