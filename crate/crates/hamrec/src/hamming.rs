//! Bit-packed K-bit ±1 codes and exact Hamming arithmetic.
//!
//! A code bit set to 1 stands for +1, clear for −1, so `popcount(code)` is
//! the number of +1 entries. Bit `b` of a code lives in word `b / 64` at
//! position `b % 64`. Padding bits above `K−1` are kept at zero by every
//! constructor, which lets distances run on whole words without masking.

use std::sync::OnceLock;

use thiserror::Error;

/// Code length ceiling; keeps band tables and scratch buffers desk-sized.
pub const MAX_BITS: u32 = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("code length {0} must be a positive multiple of 8 and at most {MAX_BITS}")]
    BadLength(u32),
    #[error("element at position {0} is not +1 or -1")]
    BadElement(usize),
    #[error("code lengths differ: {0} vs {1}")]
    LengthMismatch(u32, u32),
    #[error("row count mismatch: expected {expected}, got {got}")]
    RowMismatch { expected: usize, got: usize },
}

/// Checks the project-wide constraint on code lengths.
pub fn validate_bits(bits: u32) -> Result<(), CodeError> {
    if bits == 0 || bits % 8 != 0 || bits > MAX_BITS {
        return Err(CodeError::BadLength(bits));
    }
    Ok(())
}

#[inline]
pub fn words_for(bits: u32) -> usize {
    (bits as usize).div_ceil(64)
}

/// Mask selecting the valid bits of the last word.
#[inline]
fn tail_mask(bits: u32) -> u64 {
    let rem = bits as usize % 64;
    if rem == 0 {
        !0
    } else {
        (1u64 << rem) - 1
    }
}

/// One K-bit ±1 code, bit-packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    bits: u32,
    words: Vec<u64>,
}

impl HashCode {
    /// All-(−1) code (every bit clear).
    pub fn all_minus(bits: u32) -> Result<Self, CodeError> {
        validate_bits(bits)?;
        Ok(Self {
            bits,
            words: vec![0; words_for(bits)],
        })
    }

    /// Builds a code from raw words; padding bits are cleared.
    pub fn from_words(bits: u32, mut words: Vec<u64>) -> Result<Self, CodeError> {
        validate_bits(bits)?;
        if words.len() != words_for(bits) {
            return Err(CodeError::RowMismatch {
                expected: words_for(bits),
                got: words.len(),
            });
        }
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(bits);
        }
        Ok(Self { bits, words })
    }

    /// Packs a ±1 vector: bit i set iff `signs[i] == +1`.
    pub fn pack(signs: &[i8]) -> Result<Self, CodeError> {
        validate_bits(signs.len() as u32)?;
        let mut words = vec![0u64; words_for(signs.len() as u32)];
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => words[i / 64] |= 1u64 << (i % 64),
                -1 => {}
                _ => return Err(CodeError::BadElement(i)),
            }
        }
        Ok(Self {
            bits: signs.len() as u32,
            words,
        })
    }

    /// Sign-quantizes a real vector with the project tie rule sign(0) = +1.
    pub fn from_signs<R: crate::scalar::Real>(values: &[R]) -> Result<Self, CodeError> {
        validate_bits(values.len() as u32)?;
        let mut words = vec![0u64; words_for(values.len() as u32)];
        for (i, v) in values.iter().enumerate() {
            if *v >= R::zero() {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        Ok(Self {
            bits: values.len() as u32,
            words,
        })
    }

    /// Unpacks to a ±1 vector.
    pub fn unpack(&self) -> Vec<i8> {
        (0..self.bits as usize)
            .map(|i| if self.bit(i) { 1 } else { -1 })
            .collect()
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Sign of bit `i` as +1/−1.
    #[inline]
    pub fn sign(&self, i: usize) -> i32 {
        if self.bit(i) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.bits as usize);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// True when all padding bits above K−1 are zero.
    pub fn padding_is_zero(&self) -> bool {
        match self.words.last() {
            Some(last) => last & !tail_mask(self.bits) == 0,
            None => true,
        }
    }

    /// Code bytes in little-endian bit order: byte j holds bits 8j..8j+8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.bits as usize / 8;
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            out.push(((self.words[j / 8] >> ((j % 8) * 8)) & 0xff) as u8);
        }
        out
    }

    pub fn from_bytes(bits: u32, bytes: &[u8]) -> Result<Self, CodeError> {
        validate_bits(bits)?;
        if bytes.len() != bits as usize / 8 {
            return Err(CodeError::RowMismatch {
                expected: bits as usize / 8,
                got: bytes.len(),
            });
        }
        let mut words = vec![0u64; words_for(bits)];
        for (j, &b) in bytes.iter().enumerate() {
            words[j / 8] |= u64::from(b) << ((j % 8) * 8);
        }
        Ok(Self { bits, words })
    }

    /// Hamming distance to `other`; both codes must share K.
    #[inline]
    pub fn hamming_distance(&self, other: &Self) -> u32 {
        assert_eq!(self.bits, other.bits, "code lengths differ");
        hamming_words(&self.words, &other.words)
    }

    /// Inner product of the ±1 vectors: K − 2·distance.
    #[inline]
    pub fn similarity_score(&self, other: &Self) -> i32 {
        self.bits as i32 - 2 * self.hamming_distance(other) as i32
    }
}

/// Fallible variant of [`HashCode::hamming_distance`] for mismatched inputs.
pub fn try_hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32, CodeError> {
    if a.bits != b.bits {
        return Err(CodeError::LengthMismatch(a.bits, b.bits));
    }
    Ok(hamming_words(&a.words, &b.words))
}

pub fn try_similarity_score(a: &HashCode, b: &HashCode) -> Result<i32, CodeError> {
    Ok(a.bits as i32 - 2 * try_hamming_distance(a, b)? as i32)
}

/// XOR + popcount over raw word slices, one word at a time.
#[inline]
pub fn hamming_words_scalar(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x ^ y).count_ones())
        .sum()
}

/// Four-way unrolled XOR + popcount; bit-identical to the scalar path and
/// written so the backend can keep the accumulators in vector registers.
#[inline]
pub fn hamming_words_unrolled(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0u32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += (a[i] ^ b[i]).count_ones();
        acc[1] += (a[i + 1] ^ b[i + 1]).count_ones();
        acc[2] += (a[i + 2] ^ b[i + 2]).count_ones();
        acc[3] += (a[i + 3] ^ b[i + 3]).count_ones();
    }
    let mut sum = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        sum += (a[i] ^ b[i]).count_ones();
    }
    sum
}

pub type DistanceFn = fn(&[u64], &[u64]) -> u32;

static DISTANCE_IMPL: OnceLock<DistanceFn> = OnceLock::new();

/// Word-slice Hamming distance through the path picked at startup.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    let f = DISTANCE_IMPL.get_or_init(select_distance_impl);
    f(a, b)
}

/// The selected distance path, for callers that loop tightly and want the
/// dispatch hoisted out.
#[inline]
pub fn distance_fn() -> DistanceFn {
    *DISTANCE_IMPL.get_or_init(select_distance_impl)
}

fn select_distance_impl() -> DistanceFn {
    // Both paths are portable and bit-identical; the unrolled one wins on
    // every target with a hardware popcount, so prefer it when the CPU
    // advertises one and fall back to the simple loop otherwise.
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            return hamming_words_unrolled;
        }
    }
    #[cfg(target_arch = "aarch64")]
    {
        return hamming_words_unrolled;
    }
    #[allow(unreachable_code)]
    hamming_words_scalar
}

#[inline]
pub fn similarity_words(bits: u32, a: &[u64], b: &[u64]) -> i32 {
    bits as i32 - 2 * hamming_words(a, b) as i32
}

/// Row-major block of equal-length codes; row index is the dense node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    bits: u32,
    words_per_row: usize,
    rows: usize,
    words: Vec<u64>,
}

impl CodeMatrix {
    pub fn zeros(bits: u32, rows: usize) -> Result<Self, CodeError> {
        validate_bits(bits)?;
        let wpr = words_for(bits);
        Ok(Self {
            bits,
            words_per_row: wpr,
            rows,
            words: vec![0; wpr * rows],
        })
    }

    pub fn from_codes(codes: &[HashCode]) -> Result<Self, CodeError> {
        let bits = match codes.first() {
            Some(c) => c.bits(),
            None => return Err(CodeError::BadLength(0)),
        };
        let mut m = Self::zeros(bits, codes.len())?;
        for (r, c) in codes.iter().enumerate() {
            if c.bits() != bits {
                return Err(CodeError::LengthMismatch(bits, c.bits()));
            }
            m.set_row(r, c);
        }
        Ok(m)
    }

    pub(crate) fn from_raw(bits: u32, rows: usize, words: Vec<u64>) -> Result<Self, CodeError> {
        validate_bits(bits)?;
        let wpr = words_for(bits);
        if words.len() != wpr * rows {
            return Err(CodeError::RowMismatch {
                expected: wpr * rows,
                got: words.len(),
            });
        }
        Ok(Self {
            bits,
            words_per_row: wpr,
            rows,
            words,
        })
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn set_row(&mut self, r: usize, code: &HashCode) {
        assert_eq!(code.bits(), self.bits, "code lengths differ");
        self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
            .copy_from_slice(code.words());
    }

    pub fn code(&self, r: usize) -> HashCode {
        HashCode {
            bits: self.bits,
            words: self.row(r).to_vec(),
        }
    }

    pub fn raw_words(&self) -> &[u64] {
        &self.words
    }

    /// Copies rows `range` into a new matrix (used to split users from items).
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let w = &self.words[start * self.words_per_row..(start + len) * self.words_per_row];
        Self {
            bits: self.bits,
            words_per_row: self.words_per_row,
            rows: len,
            words: w.to_vec(),
        }
    }
}
