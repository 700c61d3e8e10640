//! Toeplitz universal hashing over GF(2).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Domain, StreamRng};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToeplitzError {
    #[error("output length {output} exceeds input length {input}")]
    OutputTooLong { input: usize, output: usize },
    #[error("seed has {got} bits, expected {expected}")]
    SeedLength { expected: usize, got: usize },
    #[error("input has {got} bits, expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("bits must be 0 or 1")]
    NotABit,
}

/// An `m x n` Toeplitz matrix given by its `n + m - 1` diagonal bits:
/// `T[i][j] = diagonal_seed[i - j + n - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToeplitzSpec {
    pub input_length: usize,
    pub output_length: usize,
    pub diagonal_seed: Vec<u8>,
}

impl ToeplitzSpec {
    pub fn new(
        input_length: usize,
        output_length: usize,
        diagonal_seed: Vec<u8>,
    ) -> Result<Self, ToeplitzError> {
        let spec = Self {
            input_length,
            output_length,
            diagonal_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Draw the diagonal from the seeded stream.
    pub fn random(
        input_length: usize,
        output_length: usize,
        seed: u64,
    ) -> Result<Self, ToeplitzError> {
        let len = seed_length(input_length, output_length);
        let mut rng = StreamRng::new(seed, Domain::ToeplitzSeed, 0);
        Self::new(
            input_length,
            output_length,
            (0..len).map(|_| rng.bit()).collect(),
        )
    }

    pub fn validate(&self) -> Result<(), ToeplitzError> {
        if self.output_length > self.input_length {
            return Err(ToeplitzError::OutputTooLong {
                input: self.input_length,
                output: self.output_length,
            });
        }
        let expected = seed_length(self.input_length, self.output_length);
        if self.diagonal_seed.len() != expected {
            return Err(ToeplitzError::SeedLength {
                expected,
                got: self.diagonal_seed.len(),
            });
        }
        if self.diagonal_seed.iter().any(|&b| b > 1) {
            return Err(ToeplitzError::NotABit);
        }
        Ok(())
    }
}

fn seed_length(n: usize, m: usize) -> usize {
    if m == 0 {
        0
    } else {
        n + m - 1
    }
}

fn pack(bits: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64) + 1];
    for (i, &b) in bits.iter().enumerate() {
        words[i / 64] |= u64::from(b) << (i % 64);
    }
    words
}

/// 64 bits of `words` starting at bit `offset`.
#[inline]
fn window(words: &[u64], offset: usize) -> u64 {
    let (w, s) = (offset / 64, offset % 64);
    if s == 0 {
        words[w]
    } else {
        (words[w] >> s) | (words[w + 1] << (64 - s))
    }
}

/// `T . bits` over GF(2).
pub fn toeplitz_hash(bits: &[u8], spec: &ToeplitzSpec) -> Result<Vec<u8>, ToeplitzError> {
    spec.validate()?;
    let (n, m) = (spec.input_length, spec.output_length);
    if bits.len() != n {
        return Err(ToeplitzError::InputLength {
            expected: n,
            got: bits.len(),
        });
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(ToeplitzError::NotABit);
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    // Row i reads the reversed seed starting at m - 1 - i, aligned with x.
    let reversed: Vec<u8> = spec.diagonal_seed.iter().rev().copied().collect();
    let r = pack(&reversed);
    let x = pack(bits);
    let full = n / 64;
    let tail = n % 64;
    let tail_mask = if tail == 0 { 0 } else { (1u64 << tail) - 1 };
    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let base = m - 1 - i;
            let mut acc = 0u64;
            for w in 0..full {
                acc ^= window(&r, base + 64 * w) & x[w];
            }
            if tail != 0 {
                acc ^= window(&r, base + 64 * full) & x[full] & tail_mask;
            }
            (acc.count_ones() & 1) as u8
        })
        .collect())
}
