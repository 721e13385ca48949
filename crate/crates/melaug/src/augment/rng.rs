//! Seeded draws for the augmentation policies.
//!
//! Randomness comes from ChaCha8 seeded with a 64-bit value; the draw
//! primitives below are fixed here rather than borrowed from a
//! distributions crate so that outputs stay bit-stable across platforms
//! and dependency upgrades.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for one augmentation draw sequence. The same seed, parameters and
/// input always produce a bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugSeed(pub u64);

/// Derive the per-trial seed for (run seed, utterance, policy, parameter
/// index, repeat index). The derivation hashes a domain-separated byte
/// string, so trials are independent of evaluation order and thread
/// scheduling.
pub fn substream(
    seed: AugSeed,
    utt_id: &str,
    policy: &str,
    param_index: usize,
    repeat: usize,
) -> AugSeed {
    let mut h = Sha256::new();
    h.update(b"melaug.substream.v1\0");
    h.update(seed.0.to_le_bytes());
    h.update((utt_id.len() as u64).to_le_bytes());
    h.update(utt_id.as_bytes());
    h.update((policy.len() as u64).to_le_bytes());
    h.update(policy.as_bytes());
    h.update((param_index as u64).to_le_bytes());
    h.update((repeat as u64).to_le_bytes());
    let digest = h.finalize();
    AugSeed(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

pub(crate) struct DrawRng(ChaCha8Rng);

impl DrawRng {
    pub fn new(seed: AugSeed) -> Self {
        DrawRng(ChaCha8Rng::seed_from_u64(seed.0))
    }

    /// Uniform in [0, 1), 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }

    /// Uniform integer in [lo, hi], via the widening-multiply map of a raw
    /// 64-bit draw onto the range size.
    pub fn range_int(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 as u128 + 1;
        let draw = self.0.next_u64() as u128;
        lo + ((draw * span) >> 64) as i64
    }
}
