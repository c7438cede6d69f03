//! Binary activation patterns and the Hamming metric on them.
//!
//! A pattern is a fixed-length bit vector packed into `u64` words. Bit `i`
//! corresponds to the `i`-th unit in layer-major order (layer 0 neuron 0
//! first). Unused high bits of the last word are always zero, so word-wise
//! comparison and popcount are exact.

use std::fmt;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern {
    len: usize,
    words: Vec<u64>,
}

impl ActivationPattern {
    /// All-zero pattern of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % WORD_BITS == 0 {
                words.push(0);
            }
            if bit {
                words[len / WORD_BITS] |= 1 << (len % WORD_BITS);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Binarize real values: bit is set iff the value is strictly positive.
    pub fn binarize(values: &[f64]) -> Self {
        Self::from_bits(values.iter().map(|&v| v > 0.0))
    }

    /// Parse a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                other => {
                    return Err(Error::validation(format!(
                        "invalid bit character {other:?} at position {i}"
                    )))
                }
            }
        }
        Ok(Self::from_bits(bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Pattern restricted to the bit ranges in `ranges`, concatenated in order.
    pub fn select(&self, ranges: &[std::ops::Range<usize>]) -> Self {
        Self::from_bits(ranges.iter().flat_map(|r| r.clone()).map(|i| self.get(i)))
    }

    /// Append the bits of `other` after the bits of `self`.
    pub fn concat(&self, other: &Self) -> Self {
        Self::from_bits(self.iter().chain(other.iter()))
    }

    /// Hamming distance; both patterns must have the same length.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::validation(format!(
                "hamming distance between patterns of length {} and {}",
                self.len, other.len
            )));
        }
        Ok(self.hamming_unchecked(other))
    }

    /// Hamming distance without the length check. Patterns of different
    /// lengths give an unspecified (but memory-safe) result.
    #[inline]
    pub fn hamming_unchecked(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// Hamming distance between two patterns of equal length.
pub fn hamming(a: &ActivationPattern, b: &ActivationPattern) -> Result<usize> {
    a.hamming(b)
}

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ActivationPattern({self})")
    }
}
