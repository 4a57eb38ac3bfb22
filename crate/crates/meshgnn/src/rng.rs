//! Deterministic RNG streams.
//!
//! Every random choice in the pipeline draws from a stream derived from the
//! run seed plus a purpose label, so toggling one stage (say, augmentation)
//! never perturbs the draws of another (say, weight initialization).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent reproducible stream for one purpose, e.g. `stream(seed, "init")`
/// or `stream(seed, "subject/17")`.
pub fn stream(seed: u64, purpose: &str) -> ChaCha12Rng {
    let mixed = fnv1a(purpose.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha12Rng::seed_from_u64(mixed)
}
