//! Deterministic derivation of independent RNG streams from one root seed.

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `root` one at a time. Streams derived with different
/// part lists are independent for practical purposes, so parallel loops can
/// hand each (epoch, item) pair its own seed without coordination.
pub fn mix(root: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix(root);
    for &p in parts {
        acc = splitmix(acc ^ p.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    acc
}
