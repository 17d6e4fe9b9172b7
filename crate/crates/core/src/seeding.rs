//! Deterministic derivation of independent RNG streams from one seed.
//!
//! Every randomized component (sampling iterations, forest trees, surrogate
//! noise, search strategies) gets its own stream keyed by a stable tag, so a
//! resumed run reproduces the original bit-for-bit without ever serializing
//! RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from the splitmix64 generator; a cheap, well-mixed 64-bit hash.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a stream tag into a new well-mixed seed.
pub(crate) fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Folds a byte string into a running seed.
pub(crate) fn mix_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut acc = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for chunk in bytes.chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        acc = mix(acc, u64::from_le_bytes(buf) ^ chunk.len() as u64);
    }
    acc
}

/// A fresh generator for the stream `(seed, tag)`.
pub(crate) fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}

/// A fresh generator for the `idx`-th member of a tagged stream family.
pub(crate) fn substream(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, tag), idx))
}
