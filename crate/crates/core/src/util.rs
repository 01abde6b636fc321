//! Small internal helpers.

/// Derive a child RNG seed from a base seed and a stream of labels, via
/// splitmix64 steps. Stable across runs and platforms.
pub(crate) fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut x = base;
    for &l in labels {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(l);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
