//! Stable seed derivation.
//!
//! Every random stream is keyed by `(base seed, component name)` so that
//! adding a component never shifts an existing stream. The mixing is
//! FNV-1a over the tag followed by a splitmix64 finalizer; it does not
//! depend on `std`'s unstable hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(base ^ splitmix64(h))
}

pub fn derive_seed_u64(base: u64, value: u64) -> u64 {
    splitmix64(base ^ splitmix64(value.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, "arrivals"), derive_seed(42, "arrivals"));
        assert_ne!(derive_seed(42, "arrivals"), derive_seed(42, "prompt_len"));
        assert_ne!(derive_seed(42, "arrivals"), derive_seed(43, "arrivals"));
        assert_ne!(derive_seed_u64(7, 1), derive_seed_u64(7, 2));
        // Pinned so that a change to the mixing is caught.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
