#![allow(dead_code)]

use std::path::PathBuf;

use siqrng::protocol::{epsilon_theta_bound, regularized_error_rate};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Next integer with the same popcount (Gosper).
fn next_combination(x: u32) -> u32 {
    let c = x & x.wrapping_neg();
    let r = x + c;
    (((r ^ x) >> 2) / c) | r
}

/// For an `n`-position string with errors at `error_mask`, the number of
/// equal splits (X half given by a mask) that put exactly `j` errors in X.
pub fn split_histogram(n: u32, error_mask: u32) -> Vec<u64> {
    let half = n / 2;
    let mut hist = vec![0u64; half as usize + 1];
    let limit = 1u32 << n;
    let mut x = (1u32 << half) - 1;
    while x < limit {
        hist[(x & error_mask).count_ones() as usize] += 1;
        x = next_combination(x);
    }
    hist
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingCase {
    pub n: u32,
    pub errors: u32,
    pub theta: f64,
    pub empirical: f64,
    pub bound: f64,
}

/// Exhaustive check of the sampling bound: for each string length, error
/// pattern and θ, the exact probability over all equal splits that the Z
/// error rate exceeds the X error rate by more than θ, next to the clamped
/// bound evaluated at the largest X error rate inside that event.
pub fn sampling_cases(lengths: &[u32], thetas: &[f64], pattern_seed: u64) -> Vec<SamplingCase> {
    let mut state = pattern_seed;
    let mut cases = Vec::new();
    for &n in lengths {
        let half = n / 2;
        let h = f64::from(half);
        for k in 0..=n {
            // random k-subset of positions
            let mut positions: Vec<u32> = (0..n).collect();
            for i in 0..n as usize {
                state = siqrng::rng::mix64(state.wrapping_add(0x9e37_79b9_7f4a_7c15));
                let j = i + (state % (n as u64 - i as u64)) as usize;
                positions.swap(i, j);
            }
            let mask = positions[..k as usize].iter().fold(0u32, |m, &p| m | (1 << p));
            let hist = split_histogram(n, mask);
            let total: u64 = hist.iter().sum();
            for &theta in thetas {
                let e_sup = f64::from(k) / f64::from(n) - theta / 2.0;
                let e_eval = regularized_error_rate(e_sup.max(0.0), u64::from(half));
                if e_eval + theta > 0.5 {
                    continue;
                }
                let hits: u64 = hist
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| {
                        let e_x = j as f64 / h;
                        let e_z = (f64::from(k) - j as f64) / h;
                        e_z > e_x + theta
                    })
                    .map(|(_, &c)| c)
                    .sum();
                let bound = epsilon_theta_bound(u64::from(n), 0.5, e_eval, theta)
                    .expect("valid bound arguments")
                    .clamped();
                cases.push(SamplingCase {
                    n,
                    errors: k,
                    theta,
                    empirical: hits as f64 / total as f64,
                    bound,
                });
            }
        }
    }
    cases
}

pub const SAMPLING_LENGTHS: [u32; 9] = [8, 10, 12, 14, 16, 18, 20, 22, 24];
pub const SAMPLING_THETAS: [f64; 8] = [0.02, 0.05, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3];

/// Mean and standard deviation of a binomial proportion estimate.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
