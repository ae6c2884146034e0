//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by the run seed plus a purpose tag and an index, so that streams for
//! different epochs or anchors never overlap and do not depend on
//! evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Purpose {
    Generate = 1,
    Split = 2,
    Init = 3,
    Shuffle = 4,
    Mining = 5,
    GradCheck = 6,
    Probe = 7,
}

/// Generator for `(seed, purpose, index)`, using ChaCha's stream counter for
/// a second, independent index (e.g. the anchor within an epoch).
pub(crate) fn rng(seed: u64, purpose: Purpose, index: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// A fresh `u64` seed for `(seed, purpose, index)`.
pub(crate) fn derive(seed: u64, purpose: Purpose, index: u64) -> u64 {
    rng(seed, purpose, index, u64::MAX).next_u64()
}

/// Public entry point for callers outside the crate (e.g. probes choosing
/// random items).
pub fn probe_rng(seed: u64, index: u64) -> ChaCha8Rng {
    rng(seed, Purpose::Probe, index, 0)
}
