//! Seed splitting.
//!
//! Realization `i` of a run with master seed `s` uses
//! `splitmix64(s + (i + 1) * 0x9E3779B97F4A7C15)`: the SplitMix64 finalizer
//! applied to the `(i + 1)`-th state of the Weyl sequence started at `s`.
//! The finalizer is a bijection on `u64`, so distinct indices give distinct
//! seeds for a fixed master seed.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `master`.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn realization_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(master, i)).collect()
}
