//! Statistical test battery for extracted bits.
//!
//! Eight tests with the standard SP 800-22 statistics and parameters:
//! monobit frequency, block frequency (M = 128), runs, longest run of ones,
//! forward cumulative sums, serial (m = 2, first p-value), approximate
//! entropy (m = 2) and the discrete Fourier transform test.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, SQRT_2};

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::bits::BitString;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const BLOCK_FREQUENCY_M: usize = 128;
pub const SERIAL_M: usize = 2;
pub const APEN_M: usize = 2;
/// Minimum length for [`run_battery`].
pub const BATTERY_MIN_BITS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub test_name: &'static str,
    pub p_value: f64,
    pub pass: bool,
    pub n_bits_used: usize,
}

impl TestReport {
    fn new(test_name: &'static str, p_value: f64, n_bits_used: usize, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            test_name,
            p_value,
            pass: p_value >= alpha,
            n_bits_used,
        }
    }
}

fn require(test: &'static str, bits: &BitString, needed: usize) -> Result<()> {
    if bits.len() < needed {
        return Err(Error::InsufficientBits {
            test,
            needed,
            actual: bits.len(),
        });
    }
    Ok(())
}

/// Upper regularized incomplete gamma `Q(a, x)`.
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(a, x)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn monobit(bits: &BitString) -> Result<f64> {
    require("monobit", bits, 100)?;
    let n = bits.len() as f64;
    let s = 2.0 * bits.count_ones() as f64 - n;
    Ok(erfc(s.abs() / n.sqrt() / SQRT_2))
}

pub fn block_frequency(bits: &BitString, block: usize) -> Result<f64> {
    require("block_frequency", bits, block.max(100))?;
    let n_blocks = bits.len() / block;
    let chi2: f64 = (0..n_blocks)
        .map(|b| {
            let ones = (b * block..(b + 1) * block).filter(|&i| bits.get(i)).count();
            let pi = ones as f64 / block as f64 - 0.5;
            pi * pi
        })
        .sum::<f64>()
        * 4.0
        * block as f64;
    Ok(igamc(n_blocks as f64 / 2.0, chi2 / 2.0))
}

fn transitions(bits: &BitString) -> u64 {
    let words = bits.words();
    let n = bits.len();
    let mut count = 0u64;
    for (w, &word) in words.iter().enumerate() {
        // bit i vs bit i+1 inside the word, then the boundary to the next word
        let next = words.get(w + 1).copied().unwrap_or(0);
        let shifted = (word >> 1) | (next << 63);
        let pairs = (n - 1).saturating_sub(64 * w).min(64);
        let mask = if pairs >= 64 { u64::MAX } else { (1u64 << pairs) - 1 };
        count += u64::from(((word ^ shifted) & mask).count_ones());
    }
    count
}

pub fn runs(bits: &BitString) -> Result<f64> {
    require("runs", bits, 100)?;
    let n = bits.len() as f64;
    let pi = bits.count_ones() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(0.0);
    }
    let v_obs = 1.0 + transitions(bits) as f64;
    let num = (v_obs - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Ok(erfc(num / den))
}

pub fn longest_run_of_ones(bits: &BitString) -> Result<f64> {
    require("longest_run_of_ones", bits, 128)?;
    let n = bits.len();
    // (block length, lowest class, class probabilities)
    let (block, lowest, probs): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.2148, 0.3672, 0.2305, 0.1875])
    } else if n < 750_000 {
        (128, 4, &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124])
    } else {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let k = probs.len() - 1;
    let n_blocks = n / block;
    let mut counts = vec![0u64; probs.len()];
    for b in 0..n_blocks {
        let (mut run, mut longest) = (0usize, 0usize);
        for i in b * block..(b + 1) * block {
            if bits.get(i) {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        counts[longest.saturating_sub(lowest).min(k)] += 1;
    }
    let nb = n_blocks as f64;
    let chi2: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&v, &p)| (v as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    Ok(igamc(k as f64 / 2.0, chi2 / 2.0))
}

/// Forward-mode cumulative sums.
pub fn cumulative_sums(bits: &BitString) -> Result<f64> {
    require("cumulative_sums", bits, 100)?;
    let n = bits.len();
    let (mut s, mut z) = (0i64, 0i64);
    for b in bits.iter() {
        s += if b { 1 } else { -1 };
        z = z.max(s.abs());
    }
    let nf = n as f64;
    let zf = z as f64;
    let sqrt_n = nf.sqrt();
    let mut sum1 = 0.0;
    let lo = ((-nf / zf + 1.0) / 4.0).trunc() as i64;
    let hi = ((nf / zf - 1.0) / 4.0).trunc() as i64;
    for k in lo..=hi {
        let k = k as f64;
        sum1 += normal_cdf((4.0 * k + 1.0) * zf / sqrt_n) - normal_cdf((4.0 * k - 1.0) * zf / sqrt_n);
    }
    let mut sum2 = 0.0;
    let lo = ((-nf / zf - 3.0) / 4.0).trunc() as i64;
    for k in lo..=hi {
        let k = k as f64;
        sum2 += normal_cdf((4.0 * k + 3.0) * zf / sqrt_n) - normal_cdf((4.0 * k + 1.0) * zf / sqrt_n);
    }
    Ok(1.0 - sum1 + sum2)
}

/// Frequencies of all overlapping `m`-bit patterns, the sequence wrapped
/// around by `m - 1` bits.
fn pattern_counts(bits: &BitString, m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        return counts;
    }
    let n = bits.len();
    let mask = (1usize << m) - 1;
    let mut window = 0usize;
    for i in 0..m - 1 {
        window = (window << 1) | usize::from(bits.get(i));
    }
    for i in 0..n {
        let b = bits.get((i + m - 1) % n);
        window = ((window << 1) | usize::from(b)) & mask;
        counts[window] += 1;
    }
    counts
}

fn psi_sq(bits: &BitString, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len() as f64;
    let sum: f64 = pattern_counts(bits, m).iter().map(|&c| (c as f64).powi(2)).sum();
    sum * (1u64 << m) as f64 / n - n
}

/// Both serial-test p-values `(∇ψ², ∇²ψ²)`.
pub fn serial_both(bits: &BitString, m: usize) -> Result<(f64, f64)> {
    require("serial", bits, 1 << (m + 3))?;
    Ok(serial_p_values(bits, m))
}

fn serial_p_values(bits: &BitString, m: usize) -> (f64, f64) {
    let (a, b, c) = (psi_sq(bits, m), psi_sq(bits, m - 1), psi_sq(bits, m.saturating_sub(2)));
    let del1 = a - b;
    let del2 = a - 2.0 * b + c;
    let dof1 = (1u64 << (m - 1)) as f64 / 2.0;
    let dof2 = (1u64 << m) as f64 / 8.0;
    (igamc(dof1, del1 / 2.0), igamc(dof2, del2 / 2.0))
}

/// Serial test, first p-value.
pub fn serial(bits: &BitString, m: usize) -> Result<f64> {
    serial_both(bits, m).map(|(p1, _)| p1)
}

pub fn approximate_entropy(bits: &BitString, m: usize) -> Result<f64> {
    require("approximate_entropy", bits, 1 << (m + 4))?;
    Ok(apen_p_value(bits, m))
}

fn apen_p_value(bits: &BitString, m: usize) -> f64 {
    let n = bits.len() as f64;
    let phi = |m: usize| -> f64 {
        if m == 0 {
            return 0.0;
        }
        pattern_counts(bits, m)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi2 = 2.0 * n * (LN_2 - apen);
    igamc((1u64 << (m - 1)) as f64, chi2 / 2.0)
}

pub fn discrete_fourier_transform(bits: &BitString) -> Result<f64> {
    require("dft", bits, 1000)?;
    let n = bits.len();
    let mut buf: Vec<Complex<f64>> = bits
        .iter()
        .map(|b| Complex::new(if b { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let threshold = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let n0 = 0.95 * nf / 2.0;
    let n1 = buf[..n / 2].iter().filter(|c| c.norm() < threshold).count() as f64;
    let d = (n1 - n0) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    Ok(erfc(d.abs() / SQRT_2))
}

type TestFn = fn(&BitString) -> Result<f64>;

const BATTERY: [(&str, TestFn); 8] = [
    ("monobit", monobit),
    ("block_frequency", |b| block_frequency(b, BLOCK_FREQUENCY_M)),
    ("runs", runs),
    ("longest_run_of_ones", longest_run_of_ones),
    ("cumulative_sums", cumulative_sums),
    ("serial", |b| serial(b, SERIAL_M)),
    ("approximate_entropy", |b| approximate_entropy(b, APEN_M)),
    ("dft", discrete_fourier_transform),
];

pub fn battery_names() -> impl Iterator<Item = &'static str> {
    BATTERY.iter().map(|(name, _)| *name)
}

/// Runs all eight tests (in parallel) on one block of bits.
pub fn run_battery(bits: &BitString, alpha: f64) -> Result<Vec<TestReport>> {
    if bits.len() < BATTERY_MIN_BITS {
        return Err(Error::InsufficientBits {
            test: "battery",
            needed: BATTERY_MIN_BITS,
            actual: bits.len(),
        });
    }
    run_battery_unchecked(bits, alpha)
}

/// Like [`run_battery`] but only enforces each test's own minimum length.
pub fn run_battery_unchecked(bits: &BitString, alpha: f64) -> Result<Vec<TestReport>> {
    BATTERY
        .par_iter()
        .map(|(name, test)| Ok(TestReport::new(name, test(bits)?, bits.len(), alpha)))
        .collect()
}

/// CSV with header `test,p_value,pass`.
pub fn reports_to_csv(reports: &[TestReport]) -> String {
    let mut out = String::from("test,p_value,pass\n");
    for r in reports {
        out.push_str(&format!("{},{:.6},{}\n", r.test_name, r.p_value, r.pass));
    }
    out
}
