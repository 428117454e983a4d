//! Deterministic seed derivation for independent random streams.
//!
//! Every stochastic decision in the crate draws from a ChaCha stream keyed by
//! `(base seed, stream label, counter)`, so replaying any iteration never
//! depends on mutable RNG state — resuming from a checkpoint reproduces the
//! original stream exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for combining seed components.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stream seed from a base seed, a label, and a counter.
pub(crate) fn stream_seed(base: u64, label: &str, counter: u64) -> u64 {
    let mut h = mix64(base);
    for b in label.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ counter)
}

/// ChaCha stream for `(base, label, counter)`.
pub(crate) fn stream_rng(base: u64, label: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, label, counter))
}
