//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by `(base seed, stream tag,
//! index)` through a splitmix64-style mixer, so parallel execution order
//! never changes which stream a task sees.

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent subseed for (`stream`, `index`) under `base`.
pub fn subseed(base: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(base) ^ stream) ^ index)
}
