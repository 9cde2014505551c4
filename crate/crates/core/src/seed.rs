//! Deterministic seed derivation.
//!
//! Every random stream in the engine is derived from a master seed plus a
//! list of integer tags, so that results do not depend on scheduling or on
//! the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the engine.
pub type EngineRng = ChaCha8Rng;

const TEST_BIT: u64 = 1 << 63;

/// Tag spaces for [`derive`]; keeps independent streams apart.
pub mod tag {
    pub const TRIAL: u64 = 0x7472_6961_6c00_0001;
    pub const RESTART: u64 = 0x7265_7374_0000_0002;
    pub const STAGE: u64 = 0x7374_6167_0000_0003;
    pub const VARIATION: u64 = 0x7661_7269_0000_0004;
    pub const EVAL: u64 = 0x6576_616c_0000_0005;
    pub const INIT: u64 = 0x696e_6974_0000_0006;
    pub const TEST: u64 = 0x7465_7374_0000_0007;
    pub const RECOVERY: u64 = 0x7265_636f_0000_0008;
    pub const TRUTH: u64 = 0x7472_7574_0000_0009;
    pub const FINAL: u64 = 0x6669_6e61_0000_000a;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed` with each tag in turn.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Seed for training-time oracle queries. The top bit is always clear.
pub fn training_seed(master: u64, tags: &[u64]) -> u64 {
    derive(master, tags) & !TEST_BIT
}

/// Seed for held-out test data. The top bit is always set, so a test seed
/// can never coincide with a [`training_seed`].
pub fn test_seed(master: u64, tags: &[u64]) -> u64 {
    derive(master, tags) | TEST_BIT
}

pub fn is_test_seed(seed: u64) -> bool {
    seed & TEST_BIT != 0
}

pub fn rng(seed: u64) -> EngineRng {
    EngineRng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, tags: &[u64]) -> EngineRng {
    rng(derive(seed, tags))
}
