//! Toeplitz-matrix hashing over GF(2).
//!
//! An `m x n` Toeplitz matrix is fixed by `n + m - 1` seed bits,
//! `T[i][j] = seed[i - j + n - 1]`. The product `T x` is read off a linear
//! convolution of the seed with the input, so the fast path computes that
//! convolution exactly over the integers (number-theoretic transform) and
//! reduces each coefficient mod 2.

pub mod ntt;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::protocol::RateBreakdown;
use crate::scalar::Real;

/// Shape and seed of one Toeplitz hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSpec {
    input_len: usize,
    output_len: usize,
    seed: BitString,
}

impl ToeplitzSpec {
    pub fn new(input_len: usize, output_len: usize, seed: BitString) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::Shape("input length must be positive".into()));
        }
        if output_len > input_len {
            return Err(Error::Shape(format!(
                "output length {output_len} exceeds input length {input_len}"
            )));
        }
        let need = input_len + output_len - 1;
        if seed.len() != need {
            return Err(Error::Shape(format!("seed has {} bits, need n + m - 1 = {need}", seed.len())));
        }
        Ok(Self {
            input_len,
            output_len,
            seed,
        })
    }

    /// Takes the first `n + m - 1` bits of a longer seed.
    pub fn from_seed_prefix(input_len: usize, output_len: usize, seed: &BitString) -> Result<Self> {
        let need = (input_len + output_len).saturating_sub(1);
        if seed.len() < need {
            return Err(Error::Shape(format!("seed has {} bits, need at least {need}", seed.len())));
        }
        Self::new(input_len, output_len, seed.slice(0, need))
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn seed(&self) -> &BitString {
        &self.seed
    }

    /// Matrix entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.seed.get(i + self.input_len - 1 - j)
    }

    fn check_input(&self, input: &BitString) -> Result<()> {
        if input.len() != self.input_len {
            return Err(Error::LengthMismatch {
                expected: self.input_len,
                actual: input.len(),
            });
        }
        Ok(())
    }
}

/// 64 bits of `words` starting at bit `start` (zero beyond the end).
#[inline]
fn window64(words: &[u64], start: usize) -> u64 {
    let w = start / 64;
    let s = start % 64;
    let lo = words.get(w).copied().unwrap_or(0);
    if s == 0 {
        lo
    } else {
        let hi = words.get(w + 1).copied().unwrap_or(0);
        (lo >> s) | (hi << (64 - s))
    }
}

/// Rows `rows` of `T x`, computed directly from the definition with 64
/// matrix entries per word operation.
pub fn toeplitz_naive_rows(spec: &ToeplitzSpec, input: &BitString, rows: std::ops::Range<usize>) -> Result<BitString> {
    spec.check_input(input)?;
    if rows.end > spec.output_len {
        return Err(Error::Shape(format!("row {} beyond output length {}", rows.end, spec.output_len)));
    }
    let n = spec.input_len;
    let total = spec.seed.len();
    // rev[k] = seed[total - 1 - k], so row i is rev[m - 1 - i .. m - 1 - i + n]
    let mut rev = BitString::zeros(total);
    for k in spec.seed.iter_ones() {
        rev.set(total - 1 - k, true);
    }
    let rev_words = rev.words();
    let x = input.words();
    let full = n / 64;
    let tail = n % 64;
    let tail_mask = if tail == 0 { 0 } else { (1u64 << tail) - 1 };
    let m = spec.output_len;
    let out = rows
        .map(|i| {
            let start = m - 1 - i;
            let mut acc = 0u64;
            for (w, &xw) in x.iter().enumerate().take(full) {
                acc ^= window64(rev_words, start + 64 * w) & xw;
            }
            if tail != 0 {
                acc ^= window64(rev_words, start + 64 * full) & x[full] & tail_mask;
            }
            acc.count_ones() & 1 == 1
        })
        .collect();
    Ok(out)
}

/// Reference Toeplitz hash.
pub fn toeplitz_naive(spec: &ToeplitzSpec, input: &BitString) -> Result<BitString> {
    toeplitz_naive_rows(spec, input, 0..spec.output_len)
}

/// Transform length used by the fast path, if the exact-integer capacity of
/// the field covers the product.
///
/// Every output coefficient is a sum of at most `n` products of bits, so the
/// convolution is exact when `n < p`; the length must also not exceed the
/// largest power-of-two root of unity in the field.
pub fn fast_transform_len(input_len: usize, output_len: usize) -> Option<usize> {
    let len = (input_len + output_len).saturating_sub(1).max(1).checked_next_power_of_two()?;
    let fits_len = len.trailing_zeros() <= ntt::MAX_LOG_LEN;
    let fits_coeff = (input_len as u128) < u128::from(ntt::P);
    (fits_len && fits_coeff).then_some(len)
}

/// Fast Toeplitz hash; identical output to [`toeplitz_naive`].
///
/// Falls back to the word-parallel direct product when the transform
/// capacity check fails.
pub fn toeplitz_fast(spec: &ToeplitzSpec, input: &BitString) -> Result<BitString> {
    spec.check_input(input)?;
    let (n, m) = (spec.input_len, spec.output_len);
    if m == 0 {
        return Ok(BitString::new());
    }
    let Some(len) = fast_transform_len(n, m) else {
        return toeplitz_naive(spec, input);
    };
    if input.count_ones() == 0 || spec.seed.count_ones() == 0 {
        return Ok(BitString::zeros(m));
    }
    let to_coeffs = |b: &BitString| -> Vec<u64> {
        let mut v = vec![0u64; b.len()];
        for i in b.iter_ones() {
            v[i] = 1;
        }
        v
    };
    let conv = ntt::cyclic_convolution(&to_coeffs(&spec.seed), &to_coeffs(input), len);
    // output[i] = sum_j seed[i - j + n - 1] x[j] = conv[i + n - 1]
    Ok(conv[n - 1..n - 1 + m].iter().map(|&c| c & 1 == 1).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOrigin {
    Simulated,
    Ingested,
}

/// Raw Z-basis key ready for hashing (D0 -> 0, D1 -> 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBitBlock {
    pub bits: BitString,
    pub origin: BlockOrigin,
}

/// Certified output plus the hash that produced it.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub bits: BitString,
    pub spec: ToeplitzSpec,
}

/// Hashes a raw block down to `floor(R_final)` bits using seed bits from an
/// independent seed source.
pub fn extract<T: Real>(block: &RawBitBlock, rate: &RateBreakdown<T>, seed: &BitString) -> Result<Extraction> {
    let m = rate.extractable_bits().ok_or_else(|| Error::Abort {
        r_final: rate.r_final.to_f64().unwrap_or(f64::NAN),
    })?;
    let m = usize::try_from(m).map_err(|_| Error::Shape("output length overflows usize".into()))?;
    let spec = ToeplitzSpec::from_seed_prefix(block.bits.len(), m, seed)?;
    let bits = toeplitz_fast(&spec, &block.bits)?;
    Ok(Extraction { bits, spec })
}
