//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the root seed plus a path of
//! integers (stream tag, task, epoch, ...). Streams never share state, so a
//! run resumed at any task boundary draws exactly the numbers an
//! uninterrupted run would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used as the first path element.
pub mod stream {
    pub const FEATURE_INIT: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const WARMUP_SHUFFLE: u64 = 3;
    pub const ADMM_SHUFFLE: u64 = 4;
    pub const FINAL_SHUFFLE: u64 = 5;
    pub const DATA: u64 = 6;
    pub const PERMUTATION: u64 = 7;
    pub const SUBSAMPLE: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `path` into `root` one element at a time.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, path))
}
