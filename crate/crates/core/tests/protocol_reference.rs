mod common;

use std::fs;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use siqrng::protocol::*;

fn read_rows(name: &str) -> Vec<Vec<f64>> {
    fs::read_to_string(common::data_path(name))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect()
}

#[test]
fn binary_entropy_matches_reference_grid() {
    let rows = read_rows("entropy_grid.txt");
    assert!(rows.len() >= 10_000);
    let mut worst = 0.0f64;
    for r in &rows {
        let h = binary_entropy(r[0]).unwrap();
        worst = worst.max((h - r[1]).abs());
    }
    assert!(worst <= 1e-12, "max abs error {worst:e}");
}

#[test]
fn binary_entropy_f32() {
    for r in read_rows("entropy_grid.txt").iter().step_by(97) {
        let h = binary_entropy(r[0] as f32).unwrap();
        assert!((f64::from(h) - r[1]).abs() < 1e-5, "{}", r[0]);
    }
}

#[test]
fn xi_matches_reference_grid() {
    for r in read_rows("xi_grid.txt") {
        let (e, t, q, want) = (r[0], r[1], r[2], r[3]);
        let got = xi_theta(e, t, q).unwrap();
        assert!(((got - want) / want).abs() < 1e-11, "xi({e}, {t}, {q}) = {got:e}, want {want:e}");
    }
}

#[test]
fn sampling_bound_is_sound_on_small_instances() {
    let cases = common::sampling_cases(&common::SAMPLING_LENGTHS, &common::SAMPLING_THETAS, 11);
    assert!(cases.len() >= 200);
    for c in &cases {
        assert!(c.empirical <= c.bound, "{c:?}");
    }
}

#[test]
fn sampling_bound_worked_instance() {
    // 24 positions, 6 errors, equal split, theta = 1/8
    let hist = common::split_histogram(24, 0b111111);
    let total: u64 = hist.iter().sum();
    assert_eq!(total, 2_704_156);
    let hits: u64 = hist
        .iter()
        .enumerate()
        .filter(|&(j, _)| (6.0 - j as f64) / 12.0 > j as f64 / 12.0 + 0.125)
        .map(|(_, &c)| c)
        .sum();
    let empirical = hits as f64 / total as f64;
    let e_sup: f64 = 6.0 / 24.0 - 0.0625;
    let bound = epsilon_theta_bound(24, 0.5, e_sup, 0.125).unwrap().clamped();
    assert!(empirical <= bound, "{empirical} > {bound}");
}

#[test]
fn bound_monotone_in_theta_and_n() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..500 {
        let q = rng.random_range(0.001..0.999);
        let e: f64 = rng.random_range(0.001..0.4);
        let n = rng.random_range(100u64..10_000_000);
        let t1 = rng.random_range(1e-5..(0.5 - e));
        let t2 = rng.random_range(t1..(0.5 - e + 1e-12).min(1.0 - e));
        let b1 = epsilon_theta_bound(n, q, e, t1).unwrap().raw_log2();
        let b2 = epsilon_theta_bound(n, q, e, t2).unwrap().raw_log2();
        assert!(b2 <= b1 + 1e-9, "theta: {b1} -> {b2}");
        let b3 = epsilon_theta_bound(n * 2, q, e, t1).unwrap().raw_log2();
        assert!(b3 <= b1 + 1e-9, "n: {b1} -> {b3}");
    }
}

#[test]
fn paper_scale_bound_is_tiny() {
    let b = epsilon_theta_bound(900_000_000u64, 0.004, 0.0033, 0.001).unwrap();
    assert!(b.raw_log2() <= -100.0, "{}", b.raw_log2());
    assert_eq!(b.clamped(), 2f64.powf(b.raw_log2()));
}

#[test]
fn solve_theta_round_trip() {
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.random_range(1_000u64..1_000_000_000);
        let q = rng.random_range(0.001..0.5);
        let e = rng.random_range(0.0005..0.2);
        let target = rng.random_range(-200.0..-1.0);
        match solve_theta(n, q, e, target) {
            Ok(theta) => {
                let b = epsilon_theta_bound(n, q, e, theta).unwrap();
                assert!(b.clamped_log2() <= target, "n={n} q={q} e={e}: {} > {target}", b.clamped_log2());
                if theta >= THETA_GRID_STEP {
                    let below = epsilon_theta_bound(n, q, e, theta - THETA_GRID_STEP).unwrap();
                    assert!(below.clamped_log2() > target);
                }
            }
            Err(siqrng::Error::UnreachableTarget { .. }) => {}
            Err(other) => panic!("{other}"),
        }
    }
}

#[test]
fn solve_theta_inverse_at_table_point() {
    let n = 3_577_108_266u64 + 14_000_000;
    let q = 14_000_000.0 / n as f64;
    let target = epsilon_theta_bound(n, q, 0.0033, 0.001).unwrap().clamped_log2();
    let theta = solve_theta(n, q, 0.0033, target).unwrap();
    assert!(theta <= 0.001 + 1e-12);
    assert_eq!(solve_theta(10_000, 0.5, 0.1, 0.0).unwrap(), 0.0);
}

#[test]
fn lengths_ordered_and_monotone() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..500 {
        let n_z = rng.random_range(1_000u64..5_000_000_000);
        let theta = rng.random_range(0.0..0.05);
        let t_e = rng.random_range(0u32..200);
        let c = rng.random_range(std::f64::consts::FRAC_1_SQRT_2..1.0);
        let eta0 = rng.random_range(0.01..1.0);
        let eta1 = rng.random_range(0.01..1.0);
        let mut prev: Option<(f64, f64, f64)> = None;
        for i in 0..20 {
            let e = (0.5 - theta) * f64::from(i) / 20.0;
            let r0 = randomness_length_ideal(n_z, e, theta, t_e).unwrap();
            let r1 = randomness_length_imperfect(n_z, e, theta, t_e, c).unwrap();
            let rf = randomness_length_final(n_z, e, theta, t_e, c, eta0, eta1).unwrap();
            assert!(r1 <= r0 + 1e-6 * r0.abs().max(1.0));
            // R_final = s R1 is only below R1 when R1 is non-negative
            if r1 >= 0.0 {
                assert!(rf <= r1 + 1e-9);
            }
            if let Some((p0, p1, pf)) = prev {
                assert!(r0 <= p0 && r1 <= p1);
                assert!(rf <= pf + 1e-9 * pf.abs().max(1.0));
            }
            prev = Some((r0, r1, rf));
        }
    }
}

#[test]
fn failure_probability_log_domain() {
    // sqrt((2^-100 + 2^-100)(2 - 2^-99)) = 2^-49 sqrt(1 - 2^-100)
    let l = failure_probability_log2(-100.0f64, 100);
    assert!((l - (-49.0)).abs() < 1e-12, "{l}");
    assert!(failure_probability(0.0f64, 2000).unwrap() < 1e-300);
    assert_eq!(failure_probability_log2(f64::NEG_INFINITY, u32::MAX), -(u32::MAX as f64) / 2.0 + 0.5);
    assert!((failure_probability(1.0f64, 2000).unwrap() - 1.0).abs() < 1e-15);
}
