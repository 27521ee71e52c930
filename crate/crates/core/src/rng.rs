//! Seeded random streams.
//!
//! Every consumer derives its own generator from `(seed, domain, index)` so the
//! draws a component sees never depend on how many numbers another component
//! consumed, nor on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Values are arbitrary but fixed: changing one changes every report.
pub mod domain {
    pub const TASKS: u64 = 0x7461_736b;
    pub const BROKER: u64 = 0x6272_6f6b;
    pub const CORRECTNESS: u64 = 0x636f_7272;
    pub const STRATEGY: u64 = 0x7374_7261;
    pub const BACKEND: u64 = 0x6261_636b;
    pub const INSTANCE: u64 = 0x696e_7374;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix any number of words into one 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x243f_6a88_85a3_08d3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// FNV-1a, used to fold string identifiers into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(mix(&[seed, domain, index]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, domain::TASKS, 3).gen();
        let b: u64 = stream(7, domain::TASKS, 3).gen();
        let c: u64 = stream(7, domain::TASKS, 4).gen();
        let d: u64 = stream(7, domain::BROKER, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn hash_str_is_stable() {
        // FNV-1a reference value for "a"
        assert_eq!(hash_str("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
