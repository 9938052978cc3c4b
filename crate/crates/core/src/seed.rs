//! Deterministic seed derivation for independent random streams.

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `words` under `base`; distinct word sequences give
/// unrelated seeds.
pub fn derive(base: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(base, |z, &w| splitmix64(z ^ splitmix64(w)))
}
