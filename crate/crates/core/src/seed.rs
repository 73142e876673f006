//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! keyed by a seed derived from a master seed and a stream index, so results
//! never depend on the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used to separate independent random streams drawn from the
/// same seed.
pub mod stream {
    pub const BALANCE: u64 = 0x6261_6c61;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const DEVICE: u64 = 0x6465_7669;
    pub const TRAIN: u64 = 0x7472_6169;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(master ^ splitmix64(index))`.
pub fn derive(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
