//! Rate model for the operating point and the λ search.

use crate::error::{Error, Result};
use crate::protocol::binary_entropy;
use crate::scalar::Real;

/// Error rate seen in X as a function of λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorModel<T> {
    /// Measured floor, independent of λ.
    Constant(T),
    /// Threshold detectors behind a beam splitter that misroutes a fraction
    /// `e_d` of the photons; doubles count half.
    DoubleClick { e_d: T },
}

/// How the `t_e` penalty enters a per-second rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TeMode<T> {
    /// `t_e` bits spread over a run of this many seconds.
    Amortized { run_duration: T },
    /// Subtract `t_e` directly from the per-second rate.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModelParams<T> {
    pub rep_rate: T,
    pub coefficient: T,
    pub theta: T,
    pub t_e: u32,
    pub eta: T,
    pub error_model: ErrorModel<T>,
    pub te_mode: TeMode<T>,
}

impl<T: Real> Default for RateModelParams<T> {
    fn default() -> Self {
        Self {
            rep_rate: T::lit(4e6),
            coefficient: T::lit(0.952),
            theta: T::lit(0.001),
            t_e: 100,
            eta: T::lit(0.1),
            error_model: ErrorModel::Constant(T::lit(0.0033)),
            te_mode: TeMode::Amortized {
                run_duration: T::lit(1800.0),
            },
        }
    }
}

/// Probability that exactly one of two balanced threshold detectors clicks
/// for a Poisson pulse of mean `lambda` and efficiency `eta`.
pub fn p_single_click<T: Real>(lambda: T, eta: T) -> T {
    let a = (-(lambda * eta) / T::two()).exp();
    T::two() * a * (T::one() - a)
}

/// X-basis error rate under `model` at mean photon number `lambda`.
pub fn error_rate_model<T: Real>(model: ErrorModel<T>, lambda: T, eta: T) -> T {
    match model {
        ErrorModel::Constant(e) => e,
        ErrorModel::DoubleClick { e_d } => {
            let mu = lambda * eta;
            let p_wrong = -(-(mu * e_d)).exp_m1();
            let p_right = -(-(mu * (T::one() - e_d))).exp_m1();
            let p_any = -(-mu).exp_m1();
            if p_any == T::zero() {
                return e_d;
            }
            let wrong_only = p_wrong * (T::one() - p_right);
            let both = p_wrong * p_right;
            (wrong_only + T::half() * both) / p_any
        }
    }
}

/// Final generation rate in bits per second at mean photon number `lambda`.
pub fn rate_model<T: Real>(lambda: T, params: &RateModelParams<T>) -> Result<T> {
    let e = error_rate_model(params.error_model, lambda, params.eta);
    let arg = e + params.theta;
    if arg > T::half() {
        return Err(Error::domain(format!("e_bX + theta = {arg} exceeds 0.5")));
    }
    let penalty = match params.te_mode {
        TeMode::Amortized { run_duration } => T::lit(f64::from(params.t_e)) / run_duration,
        TeMode::Literal => T::lit(f64::from(params.t_e)),
    };
    let p = p_single_click(lambda, params.eta);
    Ok(params.rep_rate * p * (params.coefficient - binary_entropy(arg)?) - penalty)
}

/// Grid resolution of the unimodality pre-scan.
pub const PRESCAN_POINTS: usize = 400;

/// Default bracket for [`optimize_lambda`].
pub const DEFAULT_RANGE: (f64, f64) = (0.5, 60.0);

/// Maximizes [`rate_model`] over `range` by golden-section search.
///
/// A uniform grid pre-scan rejects rate curves with more than one local
/// maximum; the search then refines the bracket around the best grid point
/// until it is narrower than `1e-6` photons.
pub fn optimize_lambda<T: Real>(params: &RateModelParams<T>, range: (T, T)) -> Result<(T, T)> {
    let (lo, hi) = range;
    if !(lo > T::zero() && hi > lo && hi.is_finite()) {
        return Err(Error::domain(format!("invalid search range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / T::lit(PRESCAN_POINTS as f64);
    let grid: Vec<T> = (0..=PRESCAN_POINTS).map(|i| lo + step * T::lit(i as f64)).collect();
    let rates = grid.iter().map(|&l| rate_model(l, params)).collect::<Result<Vec<_>>>()?;

    if !is_unimodal(&rates) {
        return Err(Error::NotUnimodal {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
        });
    }

    let best = rates
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if *r > rates[b] { i } else { b });
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(PRESCAN_POINTS)];
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::two();
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rate_model(c, params)?;
    let mut fd = rate_model(d, params)?;
    while b - a > T::lit(1e-6) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rate_model(c, params)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rate_model(d, params)?;
        }
    }
    let lambda = (a + b) / T::two();
    Ok((lambda, rate_model(lambda, params)?))
}

/// True when the sequence rises then falls, ignoring steps below `1e-9` of
/// its largest magnitude.
fn is_unimodal<T: Real>(values: &[T]) -> bool {
    let scale = values.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    let tol = scale * T::lit(1e-9);
    let mut descending = false;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d < -tol {
            descending = true;
        } else if d > tol && descending {
            return false;
        }
    }
    true
}

/// `(λ, rate)` rows for plotting the rate curve.
pub fn flatness_report<T: Real>(params: &RateModelParams<T>, lambdas: &[T]) -> Result<Vec<(T, T)>> {
    lambdas
        .iter()
        .map(|&l| Ok((l, rate_model(l, params)?)))
        .collect()
}

/// Uniform grid `start, start + step, ...` up to and including `stop`.
pub fn lambda_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}
