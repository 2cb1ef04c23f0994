//! Stable seed derivation.
//!
//! Every random draw in the toolkit comes from a `ChaCha8Rng` whose 64-bit
//! seed is derived here, so results depend only on the plan seed and on
//! stable identifiers (bucket keys, example ids, epochs), never on iteration
//! order or thread scheduling.
//!
//! * `fnv1a64` hashes a string: offset basis `0xcbf29ce484222325`, prime
//!   `0x100000001b3`, over the UTF-8 bytes.
//! * `splitmix64` is the SplitMix64 finalizer.
//! * `derive_seed(seed, parts)` folds `state = splitmix64(state ^ splitmix64(part))`
//!   starting from `state = seed`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(seed, |state, part| splitmix64(state ^ splitmix64(*part)))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}
