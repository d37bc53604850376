//! Counter-based seed derivation.
//!
//! A job identified by `(master, i, j, ...)` gets the seed obtained by
//! folding each index into the master seed through SplitMix64. The result
//! depends only on the master seed and the indices, never on scheduling.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the job with the given indices under `master`.
pub fn derive_seed(master: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(splitmix64(master), |acc, &i| splitmix64(acc ^ splitmix64(i.wrapping_add(GAMMA))))
}
