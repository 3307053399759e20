//! Named random streams derived from a single root seed.
//!
//! Every stage (splitting, initialization, sampling, dropout, FLTB) draws
//! from its own stream, so changing how much randomness one stage consumes
//! never shifts the numbers another stage sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic generator for `(seed, name, index)`.
pub fn stream(seed: u64, name: &str, index: u64) -> Rng {
    let mixed = splitmix64(seed ^ splitmix64(fnv1a(name) ^ splitmix64(index)));
    ChaCha8Rng::seed_from_u64(mixed)
}
