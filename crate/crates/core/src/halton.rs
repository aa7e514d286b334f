//! Halton low-discrepancy sequence.
//!
//! The `d`-dimensional Halton sequence pairs one van-der-Corput radical-inverse
//! stream per coordinate, using the first `d` primes as bases. The generator
//! keeps its index so interleaved callers continue the sequence instead of
//! restarting it.

use nalgebra::DVector;

/// Returns the first `n` primes (2, 3, 5, …).
pub fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate: u64 = 2;
    while primes.len() < n {
        if primes.iter().all(|p| !candidate.is_multiple_of(*p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Radical inverse of `index` in the given base: the digits of `index` are
/// mirrored around the radix point, e.g. base 2, index 3 = 0b11 → 0.11₂ = 0.75.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

/// Stateful Halton generator over `[0,1]^d` (index starts at 1; index 0 would
/// yield the degenerate origin point).
#[derive(Debug, Clone)]
pub struct HaltonSequence {
    bases: Vec<u64>,
    next_index: u64,
}

impl HaltonSequence {
    pub fn new(dim: usize) -> Self {
        HaltonSequence {
            bases: first_primes(dim),
            next_index: 1,
        }
    }

    /// Resumes a sequence that has already produced `skip` points.
    pub fn with_skip(dim: usize, skip: u64) -> Self {
        HaltonSequence {
            bases: first_primes(dim),
            next_index: skip + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    /// Number of points produced so far (the persisted skip counter).
    pub fn produced(&self) -> u64 {
        self.next_index - 1
    }
}

impl Iterator for HaltonSequence {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        let idx = self.next_index;
        self.next_index += 1;
        Some(DVector::from_fn(self.bases.len(), |i, _| {
            radical_inverse(idx, self.bases[i])
        }))
    }
}
