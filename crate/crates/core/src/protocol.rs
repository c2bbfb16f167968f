//! Finite-size entropy certification.
//!
//! Everything here is a pure function of counts and calibration numbers:
//! the binary entropy, the sampling exponent and the phase-error tail bound,
//! the three randomness lengths (ideal bases, imperfect bases, mismatched
//! detector efficiencies) and the composed failure probability.
//!
//! Probabilities that can underflow at realistic block sizes (the sampling
//! tail is routinely below 2^-1000) are carried as base-2 logarithms.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shannon entropy of a Bernoulli(x) variable, in bits.
pub fn binary_entropy<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain(format!("binary entropy argument {x} outside [0, 1]")));
    }
    if x == T::zero() || x == T::one() {
        return Ok(T::zero());
    }
    let h = -(x * x.log2()) - (T::one() - x) * (-x).ln_1p() / T::LN_2();
    Ok(h)
}

/// `(1+u) ln(1+u) - u`, the building block of the binary relative entropy.
///
/// The direct expression loses every significant digit as `u -> 0`, so a
/// power series takes over near the origin.
fn one_plus_u_log<T: Real>(u: T) -> T {
    if u == -T::one() {
        return T::one();
    }
    if u.abs() < T::lit(0.05) {
        // sum_{k>=2} (-1)^k u^k / (k (k-1))
        let mut term = u * u;
        let mut sum = T::zero();
        let mut k = 2u32;
        loop {
            let kk = T::lit(f64::from(k));
            let contrib = term / (kk * (kk - T::one()));
            sum = sum + contrib;
            if contrib.abs() <= sum.abs() * T::epsilon() * T::lit(0.25) || k > 60 {
                break;
            }
            term = -term * u;
            k += 1;
        }
        return sum;
    }
    (T::one() + u) * u.ln_1p() - u
}

/// Binary relative entropy D(a || m) in bits, for `0 < m < 1`.
fn binary_divergence<T: Real>(a: T, m: T) -> T {
    let u = (a - m) / m;
    let v = (m - a) / (T::one() - m);
    (m * one_plus_u_log(u) + (T::one() - m) * one_plus_u_log(v)) / T::LN_2()
}

/// Sampling exponent `ξ(θ) = H(e+θ-qθ) - q H(e) - (1-q) H(e+θ)`.
///
/// Evaluated as the Jensen gap `q D(e || m) + (1-q) D(e+θ || m)` with
/// `m = e + θ - qθ`, which is non-negative by construction and free of the
/// cancellation the entropy difference suffers when ξ is many orders of
/// magnitude below H.
pub fn xi_theta<T: Real>(e_bx: T, theta: T, q_x: T) -> Result<T> {
    let unit = |x: T| x >= T::zero() && x <= T::one();
    if !(unit(e_bx) && unit(theta) && unit(q_x)) {
        return Err(Error::domain(format!(
            "xi arguments must lie in [0, 1] (e_bX={e_bx}, theta={theta}, q_X={q_x})"
        )));
    }
    if e_bx + theta > T::one() {
        return Err(Error::domain(format!("e_bX + theta = {} exceeds 1", e_bx + theta)));
    }
    if theta == T::zero() || q_x == T::zero() || q_x == T::one() {
        return Ok(T::zero());
    }
    let low = e_bx;
    let high = e_bx + theta;
    let mix = high - q_x * theta;
    let xi = q_x * binary_divergence(low, mix) + (T::one() - q_x) * binary_divergence(high, mix);
    Ok(xi.max(T::zero()))
}

/// Base-2 logarithm of a probability bound, kept unclamped.
///
/// The raw value can exceed 0 (a bound above one); [`Log2Bound::clamped_log2`]
/// applies the trivial bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Log2Bound<T> {
    raw_log2: T,
}

impl<T: Real> Log2Bound<T> {
    pub fn from_log2(raw_log2: T) -> Self {
        Self { raw_log2 }
    }

    pub fn raw_log2(&self) -> T {
        self.raw_log2
    }

    pub fn clamped_log2(&self) -> T {
        self.raw_log2.min(T::zero())
    }

    /// Raw bound as a plain number; underflows to 0 for very small bounds.
    pub fn raw(&self) -> T {
        self.raw_log2.exp2()
    }

    pub fn clamped(&self) -> T {
        self.clamped_log2().exp2()
    }
}

/// Tail bound on `Prob(e_pZ > e_bX + θ)` for `n` detected events of which a
/// fraction `q_x` were measured in X.
///
/// The prefactor is singular at `e_bx ∈ {0, 1}`; pass the output of
/// [`regularized_error_rate`] when the observed rate can hit either end.
pub fn epsilon_theta_bound<T: Real>(n: u64, q_x: T, e_bx: T, theta: T) -> Result<Log2Bound<T>> {
    if n == 0 {
        return Err(Error::domain("sampling bound needs n > 0"));
    }
    if !(q_x > T::zero() && q_x < T::one()) {
        return Err(Error::domain(format!("q_X = {q_x} must lie in (0, 1)")));
    }
    if !(e_bx > T::zero() && e_bx < T::one()) {
        return Err(Error::domain(format!(
            "e_bX = {e_bx} must lie in (0, 1); regularize a zero error count first"
        )));
    }
    let xi = xi_theta(e_bx, theta, q_x)?;
    let n = T::from_count(n);
    let variance = q_x * (T::one() - q_x) * e_bx * (T::one() - e_bx) * n;
    let prefactor_log2 = -T::half() * variance.log2();
    Ok(Log2Bound::from_log2(prefactor_log2 - n * xi))
}

/// One-half-count floor (and ceiling) on the observed X error rate, so the
/// sampling bound stays finite when no (or only) errors were seen.
pub fn regularized_error_rate<T: Real>(e_bx: T, n_x: u64) -> T {
    let floor = T::half() / T::from_count(n_x.max(1));
    e_bx.max(floor).min(T::one() - floor)
}

/// Grid resolution of [`solve_theta`].
pub const THETA_GRID_STEP: f64 = 1e-6;

/// Smallest θ on a `1e-6` grid whose raw sampling bound is at most
/// `2^target_log2`.
///
/// The bound is strictly decreasing in θ, so a bisection over grid indices
/// finds the first admissible point.
pub fn solve_theta<T: Real>(n: u64, q_x: T, e_bx: T, target_log2: T) -> Result<T> {
    if !(target_log2 <= T::zero()) {
        return Err(Error::domain(format!("target 2^{target_log2} is not a probability")));
    }
    let step = T::lit(THETA_GRID_STEP);
    let max_k = ((T::one() - e_bx) / step)
        .floor()
        .to_u64()
        .ok_or_else(|| Error::domain("theta grid size"))?;
    let theta_at = |k: u64| (T::from_count(k) * step).min(T::one() - e_bx);
    let bound_at = |k: u64| epsilon_theta_bound(n, q_x, e_bx, theta_at(k)).map(|b| b.raw_log2());

    if bound_at(0)? <= target_log2 {
        return Ok(T::zero());
    }
    let best = bound_at(max_k)?;
    if best > target_log2 {
        return Err(Error::UnreachableTarget {
            target_log2: target_log2.to_f64().unwrap_or(f64::NAN),
            best_log2: best.to_f64().unwrap_or(f64::NAN),
        });
    }
    // invariant: bound(lo) > target >= bound(hi)
    let (mut lo, mut hi) = (0u64, max_k);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if bound_at(mid)? <= target_log2 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(theta_at(hi))
}

/// `-2 log2(c)`: certified bits per detected Z event before error correction.
pub fn overlap_coefficient<T: Real>(overlap_c: T) -> T {
    -T::two() * overlap_c.log2()
}

/// `2 min(η0, η1) / (η0 + η1)`.
pub fn rescale_factor<T: Real>(eta0: T, eta1: T) -> Result<T> {
    let valid = |e: T| e > T::zero() && e <= T::one();
    if !(valid(eta0) && valid(eta1)) {
        return Err(Error::domain(format!(
            "detector efficiencies must lie in (0, 1] (eta0={eta0}, eta1={eta1})"
        )));
    }
    Ok(T::two() * eta0.min(eta1) / (eta0 + eta1))
}

/// R0 = n_Z - n_Z H(e_bX + θ) - t_e. Non-positive means abort.
pub fn randomness_length_ideal<T: Real>(n_z: u64, e_bx: T, theta: T, t_e: u32) -> Result<T> {
    randomness_with_coefficient(n_z, e_bx, theta, t_e, T::one())
}

fn randomness_with_coefficient<T: Real>(
    n_z: u64,
    e_bx: T,
    theta: T,
    t_e: u32,
    coefficient: T,
) -> Result<T> {
    let n_z = T::from_count(n_z);
    let h = binary_entropy(e_bx + theta)?;
    Ok(coefficient * n_z - n_z * h - T::lit(f64::from(t_e)))
}

fn check_overlap<T: Real>(overlap_c: T) -> Result<()> {
    // 1/sqrt(2) is reached from inexact inputs such as 2^(-1/2); allow a few ulps.
    let lower = T::FRAC_1_SQRT_2() * (T::one() - T::lit(8.0) * T::epsilon());
    if !(overlap_c >= lower && overlap_c <= T::one()) {
        return Err(Error::domain(format!(
            "overlap {overlap_c} outside [1/sqrt(2), 1]"
        )));
    }
    Ok(())
}

/// R1 with imperfect, non-complementary measurement bases.
pub fn randomness_length_imperfect<T: Real>(
    n_z: u64,
    e_bx: T,
    theta: T,
    t_e: u32,
    overlap_c: T,
) -> Result<T> {
    check_overlap(overlap_c)?;
    let coefficient = overlap_coefficient(overlap_c).max(T::zero()).min(T::one());
    randomness_with_coefficient(n_z, e_bx, theta, t_e, coefficient)
}

/// R_final: R1 rescaled by the detector efficiency mismatch factor.
pub fn randomness_length_final<T: Real>(
    n_z: u64,
    e_bx: T,
    theta: T,
    t_e: u32,
    overlap_c: T,
    eta0: T,
    eta1: T,
) -> Result<T> {
    let factor = rescale_factor(eta0, eta1)?;
    Ok(factor * randomness_length_imperfect(n_z, e_bx, theta, t_e, overlap_c)?)
}

/// `log2(2^a + 2^b)` without leaving the log domain.
fn log2_add<T: Real>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == T::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp2().ln_1p() / T::LN_2()
}

/// Composed failure probability, log2 domain:
/// `ε = sqrt((ε_θ + 2^-t_e)(2 - ε_θ - 2^-t_e))`.
pub fn failure_probability_log2<T: Real>(epsilon_theta_log2: T, t_e: u32) -> T {
    let a = log2_add(epsilon_theta_log2.min(T::zero()), -T::lit(f64::from(t_e)));
    // log2(2 - 2^a) = 1 + log2(1 - 2^(a-1))
    let rest = T::one() + (-(a - T::one()).exp2()).ln_1p() / T::LN_2();
    T::half() * (a + rest)
}

/// Linear-domain convenience wrapper of [`failure_probability_log2`].
pub fn failure_probability<T: Real>(epsilon_theta: T, t_e: u32) -> Result<T> {
    if !(epsilon_theta >= T::zero() && epsilon_theta <= T::one()) {
        return Err(Error::domain(format!("epsilon_theta {epsilon_theta} is not a probability")));
    }
    Ok(failure_probability_log2(epsilon_theta.log2(), t_e).exp2())
}

/// Statistical deviation, error-correction cost and the resulting failure
/// probabilities of one estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityParams<T> {
    pub theta: T,
    pub t_e: u32,
    pub epsilon_theta_log2: T,
    pub epsilon_total_log2: T,
}

impl<T: Real> SecurityParams<T> {
    pub fn new(theta: T, t_e: u32, epsilon_theta_log2: T) -> Result<Self> {
        if !(theta >= T::zero() && theta < T::one()) {
            return Err(Error::domain(format!("theta {theta} outside [0, 1)")));
        }
        let epsilon_theta_log2 = epsilon_theta_log2.min(T::zero());
        Ok(Self {
            theta,
            t_e,
            epsilon_theta_log2,
            epsilon_total_log2: failure_probability_log2(epsilon_theta_log2, t_e),
        })
    }

    pub fn epsilon_theta(&self) -> T {
        self.epsilon_theta_log2.exp2()
    }

    pub fn epsilon_total(&self) -> T {
        self.epsilon_total_log2.exp2()
    }
}

/// Finite-size counts of one run, after the discard policy was applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TallySummary {
    pub pulses_total: u64,
    pub pulses_x: u64,
    pub pulses_z: u64,
    /// X-basis events kept for estimation (singles and doubles).
    pub detected_x: u64,
    /// Z-basis single clicks, i.e. the raw key length.
    pub detected_z: u64,
    pub x_wrong_singles: u64,
    pub x_doubles: u64,
    pub z_doubles_discarded: u64,
}

impl TallySummary {
    pub fn validate(&self) -> Result<()> {
        let ok = self.detected_x <= self.pulses_x
            && self.detected_z <= self.pulses_z
            && self.pulses_x.checked_add(self.pulses_z) == Some(self.pulses_total)
            && self.x_wrong_singles.checked_add(self.x_doubles).is_some_and(|e| e <= self.detected_x)
            && self.detected_z.checked_add(self.z_doubles_discarded).is_some_and(|z| z <= self.pulses_z);
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("inconsistent tally {self:?}")))
        }
    }

    /// Detected events entering the sampling bound, `n = n_X + n_Z`.
    pub fn detected(&self) -> u64 {
        self.detected_x + self.detected_z
    }

    /// `(wrong singles + doubles / 2) / n_X`.
    pub fn error_rate<T: Real>(&self) -> Result<T> {
        if self.detected_x == 0 {
            return Err(Error::EmptyXBasis);
        }
        let errors = T::from_count(self.x_wrong_singles) + T::half() * T::from_count(self.x_doubles);
        Ok(errors / T::from_count(self.detected_x))
    }

    /// `q_X = n_X / n`.
    pub fn x_ratio<T: Real>(&self) -> Result<T> {
        if self.detected() == 0 {
            return Err(Error::EmptyXBasis);
        }
        Ok(T::from_count(self.detected_x) / T::from_count(self.detected()))
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            pulses_total: self.pulses_total + other.pulses_total,
            pulses_x: self.pulses_x + other.pulses_x,
            pulses_z: self.pulses_z + other.pulses_z,
            detected_x: self.detected_x + other.detected_x,
            detected_z: self.detected_z + other.detected_z,
            x_wrong_singles: self.x_wrong_singles + other.x_wrong_singles,
            x_doubles: self.x_doubles + other.x_doubles,
            z_doubles_discarded: self.z_doubles_discarded + other.z_doubles_discarded,
        }
    }
}

/// Calibrated imperfections of the measurement device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementImperfection<T> {
    /// `max |<x'|z'>|` over eigenstate pairs of the two bases.
    pub overlap_c: T,
    pub eta0: T,
    pub eta1: T,
}

impl<T: Real> MeasurementImperfection<T> {
    pub fn new(overlap_c: T, eta0: T, eta1: T) -> Result<Self> {
        check_overlap(overlap_c)?;
        rescale_factor(eta0, eta1)?;
        Ok(Self { overlap_c, eta0, eta1 })
    }

    /// Builds from the calibrated `-2 log2 c` figure instead of `c` itself.
    pub fn from_coefficient(coefficient: T, eta0: T, eta1: T) -> Result<Self> {
        if !(coefficient >= T::zero() && coefficient <= T::one()) {
            return Err(Error::domain(format!("coefficient {coefficient} outside [0, 1]")));
        }
        Self::new((-coefficient / T::two()).exp2(), eta0, eta1)
    }

    pub fn coefficient(&self) -> T {
        overlap_coefficient(self.overlap_c).max(T::zero()).min(T::one())
    }
}

/// The three certified lengths and the terms that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBreakdown<T> {
    pub r0: T,
    pub r1: T,
    pub r_final: T,
    pub rescale_factor: T,
    /// `n_Z H(e_bX + θ)`.
    pub entropy_cost: T,
    /// `-2 log2 c`.
    pub coefficient: T,
}

impl<T: Real> RateBreakdown<T> {
    pub fn compute(
        n_z: u64,
        e_bx: T,
        theta: T,
        t_e: u32,
        imperfection: &MeasurementImperfection<T>,
    ) -> Result<Self> {
        let r0 = randomness_length_ideal(n_z, e_bx, theta, t_e)?;
        let r1 = randomness_length_imperfect(n_z, e_bx, theta, t_e, imperfection.overlap_c)?;
        let rescale_factor = rescale_factor(imperfection.eta0, imperfection.eta1)?;
        Ok(Self {
            r0,
            r1,
            r_final: rescale_factor * r1,
            rescale_factor,
            entropy_cost: T::from_count(n_z) * binary_entropy(e_bx + theta)?,
            coefficient: imperfection.coefficient(),
        })
    }

    /// Number of bits the extractor may emit, `floor(R_final)`, or `None`
    /// when the run must abort.
    pub fn extractable_bits(&self) -> Option<u64> {
        let m = self.r_final.floor();
        if m >= T::one() {
            m.to_u64()
        } else {
            None
        }
    }
}

/// How the statistical deviation θ is chosen for an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaChoice<T> {
    Fixed(T),
    /// Smallest grid θ with `ε_θ <= 2^target_log2`.
    Solve { target_log2: T },
}

/// Full output of parameter estimation for one tally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub e_bx: T,
    /// Error rate fed to the sampling bound after the half-count floor.
    pub e_bx_bound: T,
    pub q_x: T,
    pub security: SecurityParams<T>,
    pub rate: RateBreakdown<T>,
}

impl<T: Real> Estimate<T> {
    /// True when the detected X ratio departs from the basis-choice
    /// probability by more than 10 % (relative), which signals basis-dependent
    /// loss.
    pub fn basis_ratio_flag(&self, prob_x: T) -> bool {
        prob_x > T::zero() && ((self.q_x - prob_x) / prob_x).abs() > T::lit(0.1)
    }
}

/// Parameter estimation: error rate, θ, ε_θ, the composed ε and the
/// certified lengths for a tally.
pub fn estimate<T: Real>(
    tally: &TallySummary,
    theta: ThetaChoice<T>,
    t_e: u32,
    imperfection: &MeasurementImperfection<T>,
) -> Result<Estimate<T>> {
    tally.validate()?;
    let e_bx = tally.error_rate::<T>()?;
    let q_x = tally.x_ratio::<T>()?;
    let n = tally.detected();
    let e_bound = regularized_error_rate(e_bx, tally.detected_x);
    if tally.detected_z == 0 {
        return Err(Error::Abort { r_final: 0.0 });
    }
    let theta = match theta {
        ThetaChoice::Fixed(theta) => theta,
        ThetaChoice::Solve { target_log2 } => solve_theta(n, q_x, e_bound, target_log2)?,
    };
    if e_bx + theta > T::one() {
        return Err(Error::domain(format!("e_bX + theta = {} exceeds 1", e_bx + theta)));
    }
    let theta_bound = theta.min(T::one() - e_bound);
    let eps = epsilon_theta_bound(n, q_x, e_bound, theta_bound)?;
    let security = SecurityParams::new(theta, t_e, eps.clamped_log2())?;
    let rate = RateBreakdown::compute(tally.detected_z, e_bx, theta, t_e, imperfection)?;
    Ok(Estimate {
        e_bx,
        e_bx_bound: e_bound,
        q_x,
        security,
        rate,
    })
}

/// Contrast that the Z′-eigenstate preparation must reach before the X′
/// counts are trusted: 30 dB.
pub const Z_PRIME_GATE_RATIO: f64 = 1000.0;

/// Detector counts recorded while measuring the calibration state in Z′.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZPrimeGate {
    pub counts_d0: u64,
    pub counts_d1: u64,
}

impl ZPrimeGate {
    /// Contrast between the two detectors in dB (infinite for a clean zero).
    pub fn contrast_db(&self) -> f64 {
        let hi = self.counts_d0.max(self.counts_d1) as f64;
        let lo = self.counts_d0.min(self.counts_d1) as f64;
        if hi == 0.0 {
            return 0.0;
        }
        10.0 * (hi / lo).log10()
    }

    pub fn passes(&self) -> bool {
        let hi = self.counts_d0.max(self.counts_d1) as f64;
        let lo = self.counts_d0.min(self.counts_d1) as f64;
        hi > 0.0 && hi >= Z_PRIME_GATE_RATIO * lo
    }
}

/// Output of the overlap calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration<T> {
    /// Plug-in estimate of `max |<x'|z'>|^2`.
    pub max_overlap_sq: T,
    pub overlap_c: T,
    pub coefficient: T,
}

/// Estimates `max |<x'|z'>|` from X′ counts on a Z′ eigenstate.
///
/// Point estimate only: `p = max(d0, d1) / (d0 + d1)`, `c = sqrt(p)` clamped
/// into `[1/sqrt(2), 1]`.
pub fn overlap_bound_from_calibration<T: Real>(
    counts_d0: u64,
    counts_d1: u64,
    gate: &ZPrimeGate,
) -> Result<Calibration<T>> {
    if !gate.passes() {
        return Err(Error::Calibration(format!(
            "Z' preparation contrast {:.1} dB is below 30 dB",
            gate.contrast_db()
        )));
    }
    let total = counts_d0
        .checked_add(counts_d1)
        .ok_or_else(|| Error::Calibration("count overflow".into()))?;
    if total == 0 {
        return Err(Error::Calibration("no X' counts recorded".into()));
    }
    let p = T::from_count(counts_d0.max(counts_d1)) / T::from_count(total);
    let overlap_c = p.sqrt().max(T::FRAC_1_SQRT_2()).min(T::one());
    Ok(Calibration {
        max_overlap_sq: p,
        overlap_c,
        // -2 log2 sqrt(p), taken directly so p = 1/2 gives exactly 1
        coefficient: (-p.log2()).max(T::zero()).min(T::one()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // 50-digit reference values (mpmath) for the defining formulas.
    const H_0_0043: f64 = 0.039_994_456_588_411_956_594_73;
    const XI_TABLE1: f64 = 7.302_881_503_789_878_956_199_594e-7;
    const XI_MID: f64 = 0.008_617_809_313_380_683_266_120_357;
    const LOG2_BOUND_9E8: f64 = -664.022_183_389_418_986_376_586_7;
    const R0_LASER: f64 = 3_434_043_664.743_413_43;
    const R1_LASER: f64 = 3_262_342_467.975_413_43;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn entropy_fixed_points() {
        assert_eq!(binary_entropy(0.5f64).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0f64).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0f64).unwrap(), 0.0);
        assert!((binary_entropy(0.0043f64).unwrap() - H_0_0043).abs() < 1e-15);
        assert!(binary_entropy(-0.1f64).is_err());
        assert!(binary_entropy(1.1f64).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn entropy_is_symmetric() {
        for i in 1..1000 {
            let x = f64::from(i) / 1000.0;
            let d = binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap();
            assert!(d.abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn xi_reference_values() {
        assert_eq!(xi_theta(0.0033f64, 0.0, 0.004).unwrap(), 0.0);
        let xi = xi_theta(0.0033f64, 0.001, 0.004).unwrap();
        assert!(xi > 0.0);
        assert!(rel(xi, XI_TABLE1) < 1e-10, "{xi}");
        assert!(rel(xi_theta(0.25f64, 0.1, 0.5).unwrap(), XI_MID) < 1e-12);
        assert!(xi_theta(0.9f64, 0.2, 0.5).is_err());
    }

    #[test]
    fn xi_edge_weights() {
        assert_eq!(xi_theta(0.0f64, 0.3, 0.0).unwrap(), 0.0);
        assert_eq!(xi_theta(0.0f64, 0.3, 1.0).unwrap(), 0.0);
        // e = 0 and e + θ = 1 hit the u = -1 branch of the series helper
        let a = xi_theta(0.0f64, 1.0, 0.3).unwrap();
        let direct = binary_entropy(0.7f64).unwrap();
        assert!((a - direct).abs() < 1e-14, "{a} vs {direct}");
    }

    #[test]
    fn bound_at_zero_theta_is_prefactor() {
        let (n, q, e) = (10_000u64, 0.3f64, 0.05f64);
        let b = epsilon_theta_bound(n, q, e, 0.0).unwrap();
        let pre = 1.0 / (q * (1.0 - q) * e * (1.0 - e) * n as f64).sqrt();
        assert!(rel(b.raw(), pre) < 1e-14);
    }

    #[test]
    fn bound_table1_scale_is_tiny() {
        let b = epsilon_theta_bound(900_000_000, 0.004f64, 0.0033, 0.001).unwrap();
        assert!(b.raw_log2() <= -100.0);
        assert!((b.raw_log2() - LOG2_BOUND_9E8).abs() < 1e-6, "{}", b.raw_log2());
        assert_eq!(b.clamped_log2(), b.raw_log2());
    }

    #[test]
    fn bound_rejects_singular_prefactor() {
        assert!(epsilon_theta_bound(100, 0.5f64, 0.0, 0.1).is_err());
        assert!(epsilon_theta_bound(100, 0.0f64, 0.1, 0.1).is_err());
        assert!(epsilon_theta_bound(0, 0.5f64, 0.1, 0.1).is_err());
    }

    #[test]
    fn bound_clamps_large_prefactor() {
        let b = epsilon_theta_bound(10, 0.5f64, 0.1, 0.0).unwrap();
        assert!(b.raw() > 1.0);
        assert_eq!(b.clamped(), 1.0);
    }

    #[test]
    fn regularization_floor() {
        assert_eq!(regularized_error_rate(0.0f64, 50), 0.01);
        assert_eq!(regularized_error_rate(0.2f64, 50), 0.2);
        assert_eq!(regularized_error_rate(1.0f64, 50), 0.99);
    }

    #[test]
    fn solve_theta_inverse_consistency() {
        let (n, q, e) = (3_591_474_266u64, 0.004f64, 0.0033f64);
        let target = epsilon_theta_bound(n, q, e, 0.001).unwrap().raw_log2();
        let theta = solve_theta(n, q, e, target).unwrap();
        assert!(theta <= 0.001 + 1e-12, "{theta}");
        assert!(epsilon_theta_bound(n, q, e, theta).unwrap().raw_log2() <= target);
        // one grid step lower must violate the target
        let below = epsilon_theta_bound(n, q, e, theta - THETA_GRID_STEP).unwrap();
        assert!(below.raw_log2() > target);
    }

    #[test]
    fn solve_theta_trivial_target() {
        // prefactor below one: θ = 0 already meets target 1
        assert_eq!(solve_theta(1_000_000, 0.5f64, 0.1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn solve_theta_unreachable() {
        let err = solve_theta(20, 0.5f64, 0.1, -200.0).unwrap_err();
        assert!(matches!(err, Error::UnreachableTarget { .. }));
    }

    #[test]
    fn ideal_length_examples() {
        assert_eq!(randomness_length_ideal(1000, 0.0f64, 0.0, 100).unwrap(), 900.0);
        assert_eq!(randomness_length_ideal(100, 0.5f64, 0.0, 0).unwrap(), 0.0);
        let n_z = 1_733_623_848 + 1_843_484_418;
        let r0 = randomness_length_ideal(n_z, 0.0033f64, 0.001, 100).unwrap();
        assert!(rel(r0, R0_LASER) < 1e-12, "{r0}");
    }

    #[test]
    fn imperfect_length_examples() {
        let n_z = 1_733_623_848 + 1_843_484_418;
        let r0 = randomness_length_ideal(n_z, 0.0033f64, 0.001, 100).unwrap();
        let r1 = randomness_length_imperfect(n_z, 0.0033f64, 0.001, 100, std::f64::consts::FRAC_1_SQRT_2)
            .unwrap();
        assert!(rel(r1, r0) < 1e-15);
        let c = 2f64.powf(-0.952 / 2.0);
        let r1 = randomness_length_imperfect(n_z, 0.0033f64, 0.001, 100, c).unwrap();
        assert!(rel(r1, R1_LASER) < 1e-12, "{r1}");
        let r1 = randomness_length_imperfect(1000, 0.01f64, 0.001, 100, 1.0).unwrap();
        assert!(r1 <= 0.0);
        assert!(randomness_length_imperfect(1000, 0.01f64, 0.0, 0, 0.5).is_err());
    }

    #[test]
    fn final_length_rescale() {
        let c = 2f64.powf(-0.476);
        let r1 = randomness_length_imperfect(10_000, 0.01f64, 0.01, 100, c).unwrap();
        let same = randomness_length_final(10_000, 0.01f64, 0.01, 100, c, 0.1, 0.1).unwrap();
        assert_eq!(same, r1);
        assert!((rescale_factor(0.1f64, 0.2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let tiny = randomness_length_final(10_000, 0.01f64, 0.01, 100, c, 0.1, 1e-12).unwrap();
        assert!(tiny.abs() < 1e-6 * r1);
        assert!(randomness_length_final(10_000, 0.01f64, 0.01, 100, c, 0.1, 0.0).is_err());
    }

    #[test]
    fn failure_probability_limits() {
        assert_eq!(failure_probability(0.0f64, 5000).unwrap(), 0.0);
        assert!((failure_probability(1.0f64, 5000).unwrap() - 1.0).abs() < 1e-15);
        // (2^-99)(2 - 2^-99) under the root
        let l = failure_probability_log2(-100.0f64, 100);
        assert!((l + 49.0).abs() < 1e-15, "{l}");
    }

    #[test]
    fn security_params_invariant() {
        let s = SecurityParams::new(0.001f64, 100, -120.0).unwrap();
        let direct = ((s.epsilon_theta() + 2f64.powi(-100)) * (2.0 - s.epsilon_theta() - 2f64.powi(-100))).sqrt();
        assert!(rel(s.epsilon_total(), direct) < 1e-12);
        assert!(s.epsilon_total() <= 1.0);
        assert!(SecurityParams::new(1.0f64, 100, -1.0).is_err());
    }

    #[test]
    fn tally_error_rate_and_validation() {
        let t = TallySummary {
            pulses_total: 200,
            pulses_x: 100,
            pulses_z: 100,
            detected_x: 100,
            detected_z: 40,
            x_wrong_singles: 1,
            x_doubles: 2,
            z_doubles_discarded: 3,
        };
        t.validate().unwrap();
        assert!((t.error_rate::<f64>().unwrap() - 0.02).abs() < 1e-15);
        let empty = TallySummary::default();
        assert!(matches!(empty.error_rate::<f64>(), Err(Error::EmptyXBasis)));
        let bad = TallySummary { detected_x: 101, ..t };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn calibration_examples() {
        let gate = ZPrimeGate { counts_d0: 100_000, counts_d1: 50 };
        let c = overlap_bound_from_calibration::<f64>(50, 50, &gate).unwrap();
        assert!((c.overlap_c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((c.coefficient - 1.0).abs() < 1e-12);
        let c = overlap_bound_from_calibration::<f64>(100, 0, &gate).unwrap();
        assert_eq!(c.overlap_c, 1.0);
        assert_eq!(c.coefficient, 0.0);
        // p = 2^-0.952 realised as counts
        let total = 1_000_000_000u64;
        let d0 = (2f64.powf(-0.952) * total as f64).round() as u64;
        let c = overlap_bound_from_calibration::<f64>(d0, total - d0, &gate).unwrap();
        assert!((c.coefficient - 0.952).abs() < 1e-8, "{}", c.coefficient);
    }

    #[test]
    fn calibration_gate() {
        let weak = ZPrimeGate { counts_d0: 1000, counts_d1: 2 };
        assert!(!weak.passes());
        assert!(matches!(
            overlap_bound_from_calibration::<f64>(60, 40, &weak),
            Err(Error::Calibration(_))
        ));
        assert!(ZPrimeGate { counts_d0: 5, counts_d1: 0 }.passes());
        assert!(!ZPrimeGate { counts_d0: 0, counts_d1: 0 }.passes());
        assert!(overlap_bound_from_calibration::<f64>(0, 0, &ZPrimeGate { counts_d0: 1, counts_d1: 0 }).is_err());
    }

    #[test]
    fn f32_and_f64_agree_at_table1() {
        let n_z = 1_733_623_848u64 + 1_843_484_418;
        let a = randomness_length_imperfect(n_z, 0.0033f64, 0.001, 100, 2f64.powf(-0.476)).unwrap();
        let b = randomness_length_imperfect(n_z, 0.0033f32, 0.001, 100, 2f32.powf(-0.476)).unwrap();
        assert!(rel(f64::from(b), a) < 1e-5);
    }
}
