//! Counter-based random streams.
//!
//! A stream is a pure function of its coordinates: the 256-bit ChaCha key is
//! the little-endian concatenation of `(master_seed, step, prompt, rollout)`
//! and the ChaCha stream id carries a [`Domain`] tag. Distinct coordinate
//! tuples therefore select distinct keys, and nothing is shared between
//! streams, so rollouts can be generated in any order and merged by `(q, i)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separates stream families that reuse the same coordinate layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Rollout = 0,
    EpochShuffle = 1,
    Population = 2,
    Oracle = 3,
    Sweep = 4,
}

#[derive(Debug, Clone)]
pub struct RolloutStream {
    rng: ChaCha8Rng,
}

impl RolloutStream {
    pub fn new(domain: Domain, master_seed: u64, a: u64, b: u64, c: u64) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([master_seed, a, b, c]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(domain as u64);
        Self { rng }
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RolloutStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The stream owned by rollout `rollout_index` of prompt `prompt_index` at `step`.
pub fn derive_stream(
    master_seed: u64,
    step: u64,
    prompt_index: u64,
    rollout_index: u64,
) -> RolloutStream {
    RolloutStream::new(
        Domain::Rollout,
        master_seed,
        step,
        prompt_index,
        rollout_index,
    )
}

/// SplitMix64 finaliser, used where a seed must be derived from another seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
