//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the master seed plus a fixed
//! tag path (trial id, epoch, sample index, ...). Derived seeds are stable
//! across platforms and independent of scheduling order, which is what makes
//! per-trial replay and single-worker determinism possible.

/// One round of the splitmix64 output permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a tag into a seed. Non-commutative, so `mix(mix(s, a), b)` differs
/// from `mix(mix(s, b), a)`.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x51ed_2701)))
}

/// Folds a whole tag path into a seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |acc, &t| mix(acc, t))
}
