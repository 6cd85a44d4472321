//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream keyed by
//! `(seed, domain)` and positioned by an index (document, epoch, step...).
//! Streams never depend on scheduling, so results are identical for any
//! worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream domains. Distinct domains give statistically independent streams
/// for the same seed.
pub mod domain {
    pub const LAYOUT: u64 = 0x6c61_796f_7574;
    pub const NOISE: u64 = 0x6e6f_6973_65;
    pub const INIT: u64 = 0x696e_6974;
    pub const MASK: u64 = 0x6d61_736b;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const FINETUNE: u64 = 0x6674_756e;
    pub const EVAL: u64 = 0x6576_616c;
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(domain)));
    rng.set_stream(index);
    rng
}

/// Two-level index for streams such as (epoch, document).
pub fn stream2(seed: u64, domain: u64, outer: u64, inner: u64) -> Rng {
    stream(seed, mix(domain ^ mix(outer)), inner)
}
