//! Seed plumbing. Every random draw in the crate comes from a [`SimRng`]
//! seeded through [`substream`] or [`derive`], so one user-facing seed fixes
//! every stream.

use rand::SeedableRng;

pub type SimRng = rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of the named substream of `seed`.
pub fn substream(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a(name))
}

/// Seed of the `index`-th child of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
