//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose key is the tuple
//! `(seed, path, firm, tag)`. Streams never share state, so the draws of one
//! firm on one path do not depend on how many firms, paths or threads exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which physical process a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Brownian = 1,
    Jumps = 2,
    InitialOutput = 3,
    Population = 4,
}

pub fn stream(seed: u64, path: u64, firm: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(&firm.to_le_bytes());
    key[24..32].copy_from_slice(&(tag as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derive an unrelated seed from `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
