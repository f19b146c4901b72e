//! Portable deterministic randomness.
//!
//! Every random quantity in the toolkit comes from xoshiro256++ seeded through
//! SplitMix64 (`rand_xoshiro`'s `seed_from_u64`). A component never shares a
//! generator with another: it derives its own stream from a user seed and a
//! fixed [`Stream`] tag. Uniform doubles take the top 53 bits of a draw;
//! Gaussians use the basic Box-Muller transform and consume exactly two
//! uniforms per sample.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Stream tags. Values are part of the reproducibility contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    Utterances = 2,
    Split = 3,
    Shuffle = 4,
    InitStudent = 5,
    InitTeacher = 6,
    InitDecoder = 7,
    Dropout = 8,
    Sampling = 9,
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    pub fn stream(seed: u64, stream: Stream) -> Self {
        Self::new(splitmix64(seed) ^ splitmix64(0xC0DE_0000 + stream as u64))
    }

    /// Sub-stream for a numbered item (epoch, utterance, ...).
    pub fn substream(seed: u64, stream: Stream, index: u64) -> Self {
        Self::new(splitmix64(splitmix64(seed) ^ splitmix64(0xC0DE_0000 + stream as u64)) ^ splitmix64(index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
