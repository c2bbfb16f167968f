//! Number-theoretic transform over the prime field `p = 2^64 - 2^32 + 1`.
//!
//! The multiplicative group has order divisible by 2^32, so power-of-two
//! transforms up to length 2^32 exist, and every integer below `p` is
//! represented exactly.

use rayon::prelude::*;

pub const P: u64 = 0xFFFF_FFFF_0000_0001;
const EPSILON: u64 = 0xFFFF_FFFF; // 2^64 mod p
const GENERATOR: u64 = 7;

/// Largest supported transform length.
pub const MAX_LOG_LEN: u32 = 32;

#[inline(always)]
fn reduce128(x: u128) -> u64 {
    let lo = x as u64;
    let hi = (x >> 64) as u64;
    let hi_hi = hi >> 32;
    let hi_lo = hi & EPSILON;
    // 2^96 = -1 and 2^64 = 2^32 - 1 (mod p)
    let (mut t0, borrow) = lo.overflowing_sub(hi_hi);
    if borrow {
        t0 = t0.wrapping_sub(EPSILON);
    }
    let t1 = hi_lo * EPSILON;
    let (mut r, carry) = t0.overflowing_add(t1);
    if carry {
        r = r.wrapping_add(EPSILON);
    }
    if r >= P {
        r - P
    } else {
        r
    }
}

#[inline(always)]
pub fn mul(a: u64, b: u64) -> u64 {
    reduce128(u128::from(a) * u128::from(b))
}

#[inline(always)]
pub fn add(a: u64, b: u64) -> u64 {
    let (s, over) = a.overflowing_add(b);
    if over || s >= P {
        s.wrapping_sub(P)
    } else {
        s
    }
}

#[inline(always)]
pub fn sub(a: u64, b: u64) -> u64 {
    let (d, borrow) = a.overflowing_sub(b);
    if borrow {
        d.wrapping_add(P)
    } else {
        d
    }
}

pub fn pow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul(acc, base);
        }
        base = mul(base, base);
        exp >>= 1;
    }
    acc
}

pub fn inverse(a: u64) -> u64 {
    pow(a, P - 2)
}

/// Primitive `2^log_len`-th root of unity.
pub fn root_of_unity(log_len: u32) -> u64 {
    assert!(log_len <= MAX_LOG_LEN);
    pow(GENERATOR, (P - 1) >> log_len)
}

fn bit_reverse(values: &mut [u64]) {
    let n = values.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            values.swap(i, j);
        }
    }
}

/// In-place transform; `values.len()` must be a power of two.
pub fn transform(values: &mut [u64], inverse_dir: bool) {
    let n = values.len();
    assert!(n.is_power_of_two(), "transform length {n} is not a power of two");
    let log_n = n.trailing_zeros();
    assert!(log_n <= MAX_LOG_LEN);
    bit_reverse(values);

    let mut len = 2;
    while len <= n {
        let mut w = root_of_unity(len.trailing_zeros());
        if inverse_dir {
            w = inverse(w);
        }
        let half = len / 2;
        let mut twiddles = Vec::with_capacity(half);
        let mut t = 1u64;
        for _ in 0..half {
            twiddles.push(t);
            t = mul(t, w);
        }
        let butterfly = |block: &mut [u64]| {
            let (lo, hi) = block.split_at_mut(half);
            for ((a, b), &tw) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let u = *a;
                let v = mul(*b, tw);
                *a = add(u, v);
                *b = sub(u, v);
            }
        };
        if n / len >= 64 {
            values.par_chunks_mut(len).for_each(butterfly);
        } else {
            values.chunks_mut(len).for_each(butterfly);
        }
        len <<= 1;
    }

    if inverse_dir {
        let scale = inverse(n as u64);
        values.par_iter_mut().for_each(|v| *v = mul(*v, scale));
    }
}

/// Cyclic convolution of length `len` (power of two) of two sequences with
/// non-negative entries, exact as long as every true coefficient is below `P`.
pub fn cyclic_convolution(a: &[u64], b: &[u64], len: usize) -> Vec<u64> {
    assert!(a.len() <= len && b.len() <= len);
    let mut fa = vec![0u64; len];
    fa[..a.len()].copy_from_slice(a);
    let mut fb = vec![0u64; len];
    fb[..b.len()].copy_from_slice(b);
    rayon::join(|| transform(&mut fa, false), || transform(&mut fb, false));
    fa.par_iter_mut().zip(fb.par_iter()).for_each(|(x, &y)| *x = mul(*x, y));
    drop(fb);
    transform(&mut fa, true);
    fa
}
