//! Photon source model: Poisson photon numbers with optional per-pulse
//! intensity fluctuation, and waveplate state preparation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, CounterRng};

/// Photon numbers above this are truncated.
pub const MAX_PHOTONS: u32 = u16::MAX as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Laser,
    Sunlight,
}

impl SourceKind {
    pub fn default_fluctuation(self) -> f64 {
        match self {
            SourceKind::Laser => 0.0,
            SourceKind::Sunlight => 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Mean photon number per pulse before detection, λ.
    pub mean_photons: f64,
    /// Pulse repetition rate G in Hz.
    pub pulse_rate: f64,
    pub hwp_deg: f64,
    pub qwp_deg: f64,
    /// Relative standard deviation of the per-pulse intensity.
    pub intensity_fluctuation: f64,
    pub kind: SourceKind,
}

impl SourceParams {
    /// The attenuated cw laser at its operating point (|+> preparation).
    pub fn laser() -> Self {
        Self {
            mean_photons: 14.4,
            pulse_rate: 4.0e6,
            hwp_deg: 22.5,
            qwp_deg: 0.0,
            intensity_fluctuation: 0.0,
            kind: SourceKind::Laser,
        }
    }

    pub fn sunlight() -> Self {
        Self {
            mean_photons: 11.6,
            intensity_fluctuation: SourceKind::Sunlight.default_fluctuation(),
            kind: SourceKind::Sunlight,
            ..Self::laser()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photons >= 0.0 && self.mean_photons.is_finite()) {
            return Err(Error::Config(format!("source.lambda = {} must be >= 0", self.mean_photons)));
        }
        if !(self.pulse_rate > 0.0 && self.pulse_rate.is_finite()) {
            return Err(Error::Config(format!("source.pulse_rate = {} must be > 0", self.pulse_rate)));
        }
        if !(self.intensity_fluctuation >= 0.0 && self.intensity_fluctuation.is_finite()) {
            return Err(Error::Config("source.fluctuation must be >= 0".into()));
        }
        if !(self.hwp_deg.is_finite() && self.qwp_deg.is_finite()) {
            return Err(Error::Config("waveplate angles must be finite".into()));
        }
        Ok(())
    }
}

/// Normalized Jones vector in the {|H>, |V>} basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    pub h: Complex64,
    pub v: Complex64,
}

pub type Jones = [[Complex64; 2]; 2];

impl PolarizationState {
    pub const NORM_TOLERANCE: f64 = 1e-12;

    pub fn new(h: Complex64, v: Complex64) -> Result<Self> {
        let state = Self { h, v };
        if (state.norm_sqr() - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::domain(format!("Jones vector norm^2 {} is not 1", state.norm_sqr())));
        }
        Ok(state)
    }

    pub fn horizontal() -> Self {
        Self { h: Complex64::new(1.0, 0.0), v: Complex64::new(0.0, 0.0) }
    }

    pub fn diagonal() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { h: a, v: a }
    }

    pub fn anti_diagonal() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Self { h: Complex64::new(a, 0.0), v: Complex64::new(-a, 0.0) }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    pub fn apply(&self, m: &Jones) -> Self {
        Self {
            h: m[0][0] * self.h + m[0][1] * self.v,
            v: m[1][0] * self.h + m[1][1] * self.v,
        }
    }
}

/// Linear retarder with its fast axis at `axis` radians from H.
pub fn retarder(axis: f64, retardance: f64) -> Jones {
    let (s, c) = axis.sin_cos();
    let phase = Complex64::from_polar(1.0, retardance);
    let one = Complex64::new(1.0, 0.0);
    // R(-axis) diag(1, e^{iΓ}) R(axis)
    [
        [one * (c * c) + phase * (s * s), (one - phase) * (c * s)],
        [(one - phase) * (c * s), one * (s * s) + phase * (c * c)],
    ]
}

pub fn half_wave_plate(angle_deg: f64) -> Jones {
    retarder(angle_deg.to_radians(), PI)
}

pub fn quarter_wave_plate(angle_deg: f64) -> Jones {
    retarder(angle_deg.to_radians(), PI / 2.0)
}

/// State obtained from |H> (the output of the source polarizer) after a
/// QWP and then a HWP.
pub fn polarization_from_waveplates(hwp_deg: f64, qwp_deg: f64) -> PolarizationState {
    PolarizationState::horizontal()
        .apply(&quarter_wave_plate(qwp_deg))
        .apply(&half_wave_plate(hwp_deg))
}

/// A configured source. The prepared state is fixed for the run.
#[derive(Debug, Clone)]
pub struct Source {
    params: SourceParams,
    state: PolarizationState,
    fixed_poisson: Option<Poisson<f64>>,
}

impl Source {
    pub fn new(params: SourceParams) -> Result<Self> {
        params.validate()?;
        let fixed_poisson = if params.intensity_fluctuation == 0.0 && params.mean_photons > 0.0 {
            Some(Poisson::new(params.mean_photons).map_err(|e| Error::Config(format!("poisson: {e}")))?)
        } else {
            None
        };
        Ok(Self {
            params,
            state: polarization_from_waveplates(params.hwp_deg, params.qwp_deg),
            fixed_poisson,
        })
    }

    pub fn params(&self) -> &SourceParams {
        &self.params
    }

    pub fn state(&self) -> PolarizationState {
        self.state
    }

    /// Photon number of one pulse drawn from `rng`.
    pub fn photons<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let draw = match &self.fixed_poisson {
            Some(poisson) => poisson.sample(rng),
            None => {
                let z: f64 = rng.sample(StandardNormal);
                let lambda = self.params.mean_photons * (1.0 + self.params.intensity_fluctuation * z);
                if lambda <= 0.0 {
                    return 0;
                }
                match Poisson::new(lambda) {
                    Ok(p) => p.sample(rng),
                    Err(_) => f64::from(MAX_PHOTONS),
                }
            }
        };
        (draw.min(f64::from(MAX_PHOTONS))) as u32
    }

    /// Photon number and prepared state of pulse `index`.
    pub fn sample_pulse(&self, seed: u64, index: u64) -> (u32, PolarizationState) {
        let mut rng = CounterRng::new(seed, stream::SOURCE, index);
        (self.photons(&mut rng), self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn same_up_to_phase(a: &PolarizationState, b: &PolarizationState) -> bool {
        (a.inner(b).norm() - 1.0).abs() < 1e-12
    }

    // Closed forms of the two plates (global phase dropped), written
    // independently of `retarder`.
    fn hwp_closed(deg: f64) -> Jones {
        let t = 2.0 * deg.to_radians();
        let c = Complex64::new(t.cos(), 0.0);
        let s = Complex64::new(t.sin(), 0.0);
        [[c, s], [s, -c]]
    }

    fn qwp_closed(deg: f64) -> Jones {
        let (s, c) = deg.to_radians().sin_cos();
        let i = Complex64::new(0.0, 1.0);
        let off = (Complex64::new(1.0, 0.0) - i) * (s * c);
        [[c * c + i * (s * s), off], [off, s * s + i * (c * c)]]
    }

    fn matmul(a: &Jones, b: &Jones) -> Jones {
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }

    #[test]
    fn operating_point_is_plus() {
        let s = polarization_from_waveplates(22.5, 0.0);
        assert!(same_up_to_phase(&s, &PolarizationState::diagonal()));
        let s = polarization_from_waveplates(0.0, 0.0);
        assert!(same_up_to_phase(&s, &PolarizationState::horizontal()));
    }

    #[test]
    fn matches_matrix_product_oracle() {
        for i in 0..50 {
            let hwp = -90.0 + 7.3 * f64::from(i);
            let qwp = 13.0 - 4.1 * f64::from(i);
            let m = matmul(&hwp_closed(hwp), &qwp_closed(qwp));
            let expected = PolarizationState { h: m[0][0], v: m[1][0] };
            let got = polarization_from_waveplates(hwp, qwp);
            assert!((got.norm_sqr() - 1.0).abs() < 1e-12);
            assert!(same_up_to_phase(&got, &expected), "hwp={hwp} qwp={qwp}");
        }
    }

    #[test]
    fn wrong_outcome_follows_sin_squared() {
        let minus = PolarizationState::anti_diagonal();
        for i in -40..=40 {
            let delta = f64::from(i) * 2.5;
            let s = polarization_from_waveplates(22.5 + delta, 0.0);
            let wrong = minus.inner(&s).norm_sqr();
            let expected = (2.0 * delta.to_radians()).sin().powi(2);
            assert!((wrong - expected).abs() < 1e-9, "delta={delta}");
            let shifted = polarization_from_waveplates(22.5 + delta + 90.0, 0.0);
            assert!((minus.inner(&shifted).norm_sqr() - wrong).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_mean_gives_vacuum() {
        let src = Source::new(SourceParams { mean_photons: 0.0, ..SourceParams::laser() }).unwrap();
        assert!((0..1000).all(|i| src.sample_pulse(1, i).0 == 0));
        let src = Source::new(SourceParams { mean_photons: 0.0, ..SourceParams::sunlight() }).unwrap();
        assert!((0..1000).all(|i| src.sample_pulse(1, i).0 == 0));
    }

    #[test]
    fn pulses_are_deterministic() {
        let src = Source::new(SourceParams::sunlight()).unwrap();
        for i in 0..100 {
            assert_eq!(src.sample_pulse(9, i), src.sample_pulse(9, i));
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(Source::new(SourceParams { mean_photons: -1.0, ..SourceParams::laser() }).is_err());
        assert!(Source::new(SourceParams { pulse_rate: 0.0, ..SourceParams::laser() }).is_err());
        assert!(PolarizationState::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).is_err());
    }
}
