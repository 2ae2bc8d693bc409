//! Named random substreams.
//!
//! Every consumer of randomness asks for a stream by name (and optionally an
//! index such as the epoch), so changing how much randomness one component
//! draws never shifts another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATASET: &str = "dataset";
pub const INIT: &str = "init";
pub const ORACLE_ROW: &str = "oracle-row";
pub const ORACLE_COL: &str = "oracle-col";
pub const FINETUNE: &str = "finetune";
pub const ATTACK: &str = "attack";
pub const EVAL: &str = "eval";

/// Deterministic child seed for `(root, name, index)`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name, then splitmix64 finalization of the combination.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root
        ^ h.rotate_left(17)
        ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, name, index))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
