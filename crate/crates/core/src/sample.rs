//! Seeded uniform sampling without replacement.
//!
//! ChaCha8 seeded from a `u64` and a partial Fisher-Yates shuffle with
//! unbiased bounded draws (Lemire's multiply-and-reject). Only 64-bit
//! integer arithmetic is involved, so a seed selects the same sample on
//! every platform.

use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleTooLarge {
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for SampleTooLarge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot draw {} items from {}", self.requested, self.available)
    }
}

/// Uniform integer in `[0, bound)`.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = rng.next_u64() as u128 * bound as u128;
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// Indices of an `n`-element sample from `0..len`, in draw order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>, SampleTooLarge> {
    if n > len {
        return Err(SampleTooLarge { requested: n, available: len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + bounded(&mut rng, (len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Draw `n` items uniformly without replacement, fully determined by `seed`.
pub fn draw_sample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, SampleTooLarge> {
    Ok(sample_indices(items.len(), n, seed)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}
