//! Seed derivation.
//!
//! Every random stream in an experiment is derived from one 64-bit master
//! seed. A stream is identified by `(master, index, label)` and its seed is
//!
//! ```text
//! s0 = splitmix64(master)
//! s1 = splitmix64(s0 ^ index)
//! s  = splitmix64(s1 ^ fnv1a64(label))
//! ```
//!
//! The resulting seed initializes a ChaCha8 generator, which is counter based,
//! so streams with different seeds are independent for all practical purposes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Derive the seed of stream `(index, label)` under `master`.
pub fn sub_seed(master: u64, index: u64, label: &str) -> u64 {
    let s0 = splitmix64(master);
    let s1 = splitmix64(s0 ^ index);
    splitmix64(s1 ^ fnv1a64(label.as_bytes()))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
