//! Measurement device simulation.
//!
//! Basis choice, the Sagnac phase unitary followed by the fixed polarization
//! controller, threshold detection with efficiency and dark counts, and
//! non-paralyzable dead time. Also the tally that turns an event stream into
//! finite-size counts.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::protocol::TallySummary;
use crate::rng::{keyed_uniform, stream, CounterRng};
use crate::source::{Jones, PolarizationState, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    X,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    None,
    D0,
    D1,
    Double,
}

impl Outcome {
    fn from_clicks(d0: bool, d1: bool) -> Self {
        match (d0, d1) {
            (false, false) => Outcome::None,
            (true, false) => Outcome::D0,
            (false, true) => Outcome::D1,
            (true, true) => Outcome::Double,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseEvent {
    pub index: u64,
    pub basis: Basis,
    pub outcome: Outcome,
}

impl PulseEvent {
    /// Byte layout shared with the binary event file: bit 0 basis (1 = X),
    /// bits 1-2 outcome.
    pub fn code(&self) -> u8 {
        encode(self.basis, self.outcome)
    }
}

pub(crate) fn encode(basis: Basis, outcome: Outcome) -> u8 {
    let b = match basis {
        Basis::Z => 0,
        Basis::X => 1,
    };
    let o = match outcome {
        Outcome::None => 0,
        Outcome::D0 => 1,
        Outcome::D1 => 2,
        Outcome::Double => 3,
    };
    b | (o << 1)
}

pub(crate) fn decode(code: u8) -> Option<(Basis, Outcome)> {
    if code & 0xF8 != 0 {
        return None;
    }
    let basis = if code & 1 == 1 { Basis::X } else { Basis::Z };
    let outcome = match (code >> 1) & 3 {
        0 => Outcome::None,
        1 => Outcome::D0,
        2 => Outcome::D1,
        _ => Outcome::Double,
    };
    Some((basis, outcome))
}

/// Pulse indices of an event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Indices {
    Contiguous { start: u64 },
    Explicit(Vec<u64>),
}

/// Compact event stream: one code byte per pulse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    indices: Indices,
    codes: Vec<u8>,
}

impl EventStream {
    pub fn contiguous(start: u64, codes: Vec<u8>) -> Result<Self> {
        if let Some(bad) = codes.iter().find(|&&c| decode(c).is_none()) {
            return Err(Error::Format(format!("invalid event code {bad:#04x}")));
        }
        Ok(Self {
            indices: Indices::Contiguous { start },
            codes,
        })
    }

    /// Builds from arbitrary events. Indices must be strictly increasing.
    pub fn from_events(events: &[PulseEvent]) -> Result<Self> {
        if let Some(w) = events.windows(2).find(|w| w[1].index <= w[0].index) {
            return Err(Error::Format(format!(
                "event indices not strictly increasing ({} then {})",
                w[0].index, w[1].index
            )));
        }
        let codes = events.iter().map(PulseEvent::code).collect();
        let contiguous = events.windows(2).all(|w| w[1].index == w[0].index + 1);
        let indices = match events.first() {
            Some(first) if contiguous => Indices::Contiguous { start: first.index },
            Some(_) => Indices::Explicit(events.iter().map(|e| e.index).collect()),
            None => Indices::Contiguous { start: 0 },
        };
        Ok(Self { indices, codes })
    }

    /// Builds from parallel index and code vectors; indices must be strictly
    /// increasing.
    pub fn from_parts(indices: Vec<u64>, codes: Vec<u8>) -> Result<Self> {
        if indices.len() != codes.len() {
            return Err(Error::LengthMismatch {
                expected: indices.len(),
                actual: codes.len(),
            });
        }
        if let Some(w) = indices.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Format(format!(
                "event indices not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let contiguous = indices.windows(2).all(|w| w[1] == w[0] + 1);
        let mut out = Self::contiguous(indices.first().copied().unwrap_or(0), codes)?;
        if !contiguous {
            out.indices = Indices::Explicit(indices);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn indices(&self) -> &Indices {
        &self.indices
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, i: usize) -> PulseEvent {
        let index = match &self.indices {
            Indices::Contiguous { start } => start + i as u64,
            Indices::Explicit(v) => v[i],
        };
        let (basis, outcome) = decode(self.codes[i]).expect("codes validated on construction");
        PulseEvent { index, basis, outcome }
    }

    pub fn iter(&self) -> impl Iterator<Item = PulseEvent> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConfig {
    pub prob_x: f64,
    /// `(φ_c, φ_a)` for the Z setting.
    pub phase_z: (f64, f64),
    /// `(φ_c, φ_a)` for the X setting.
    pub phase_x: (f64, f64),
    pub basis_seed: u64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            prob_x: 0.004,
            phase_z: (0.0, 0.0),
            phase_x: (-FRAC_PI_4, FRAC_PI_4),
            basis_seed: 0x5eed_ba51,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob_x) {
            return Err(Error::Config(format!("measurement.prob_x = {} outside [0, 1]", self.prob_x)));
        }
        Ok(())
    }

    pub fn phases(&self, basis: Basis) -> (f64, f64) {
        match basis {
            Basis::X => self.phase_x,
            Basis::Z => self.phase_z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub eta0: f64,
    pub eta1: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// Seconds.
    pub dead_time: f64,
    /// Seconds.
    pub gate_width: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            eta0: 0.1,
            eta1: 0.1,
            dark_rate: 200.0,
            dead_time: 50e-9,
            gate_width: 100e-9,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.eta0) && unit(self.eta1)) {
            return Err(Error::Config("detector efficiencies must lie in [0, 1]".into()));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::Config("detector.dark_rate must be >= 0".into()));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(Error::Config("detector.dead_time must be >= 0".into()));
        }
        if !(self.gate_width > 0.0 && self.gate_width.is_finite()) {
            return Err(Error::Config("detector.gate_width must be > 0".into()));
        }
        Ok(())
    }

    /// Probability of at least one dark count inside one gate.
    pub fn dark_click_prob(&self) -> f64 {
        -(-self.dark_rate * self.gate_width).exp_m1()
    }
}

/// Basis for pulse `index`; a pure function of `(seed, index)`.
pub fn choose_basis(seed: u64, index: u64, prob_x: f64) -> Basis {
    if keyed_uniform(seed, stream::BASIS, index) < prob_x {
        Basis::X
    } else {
        Basis::Z
    }
}

/// Sagnac loop phase unitary `diag(e^{iφ_c}, e^{iφ_a})`.
pub fn sagnac_unitary(phi_c: f64, phi_a: f64) -> Jones {
    let zero = Complex64::new(0.0, 0.0);
    [
        [Complex64::from_polar(1.0, phi_c), zero],
        [zero, Complex64::from_polar(1.0, phi_a)],
    ]
}

/// Fixed polarization-controller unitary `½[[1+i, 1-i], [1-i, 1+i]]`.
pub fn polarization_controller() -> Jones {
    let p = Complex64::new(0.5, 0.5);
    let m = Complex64::new(0.5, -0.5);
    [[p, m], [m, p]]
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

/// `U_C U_F(φ_c, φ_a)` for the given basis setting.
pub fn measurement_unitary(basis: Basis, config: &MeasurementConfig) -> Jones {
    let (c, a) = config.phases(basis);
    matmul(&polarization_controller(), &sagnac_unitary(c, a))
}

/// Probabilities of the photon leaving towards detector 0 (H port) and
/// detector 1 (V port) of the final polarizing splitter.
pub fn effective_projection_probs(
    state: &PolarizationState,
    basis: Basis,
    config: &MeasurementConfig,
) -> Result<(f64, f64)> {
    if (state.norm_sqr() - 1.0).abs() > PolarizationState::NORM_TOLERANCE {
        return Err(Error::domain(format!("state norm^2 {} is not 1", state.norm_sqr())));
    }
    let out = state.apply(&measurement_unitary(basis, config));
    let p0 = out.h.norm_sqr();
    let p1 = out.v.norm_sqr();
    let total = p0 + p1;
    Ok((p0 / total, p1 / total))
}

/// Raw click flags of the two detectors before dead time is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Clicks {
    pub d0: bool,
    pub d1: bool,
}

/// Threshold detection of `photons` photons routed to detector 0 and 1 with
/// probabilities `(p0, p1)`, thinned by the efficiencies, plus independent
/// in-gate dark counts.
///
/// Uses the exact joint law of "at least one photon registered" per arm,
/// `P(none) = (1 - p0η0 - p1η1)^n`, `P(no arm 0) = (1 - p0η0)^n`, so one uniform
/// covers any photon number.
pub fn raw_clicks<R: rand_core::RngCore>(
    photons: u32,
    p0: f64,
    p1: f64,
    det: &DetectorParams,
    rng: &mut R,
) -> Clicks {
    let (mut d0, mut d1) = (false, false);
    if photons > 0 {
        let a = p0 * det.eta0;
        let b = p1 * det.eta1;
        let n = f64::from(photons);
        let pow = |x: f64| if x <= 0.0 { 0.0 } else { (n * x.ln()).exp() };
        let none = pow(1.0 - a - b);
        let no_d0 = pow(1.0 - a);
        let no_d1 = pow(1.0 - b);
        let only_d0 = (no_d1 - none).max(0.0);
        let only_d1 = (no_d0 - none).max(0.0);
        let u = crate::rng::unit_f64(rng.next_u64());
        if u < none {
        } else if u < none + only_d0 {
            d0 = true;
        } else if u < none + only_d0 + only_d1 {
            d1 = true;
        } else {
            d0 = true;
            d1 = true;
        }
    }
    let dark = det.dark_click_prob();
    if dark > 0.0 {
        d0 |= crate::rng::unit_f64(rng.next_u64()) < dark;
        d1 |= crate::rng::unit_f64(rng.next_u64()) < dark;
    }
    Clicks { d0, d1 }
}

/// Non-paralyzable dead time tracked in whole pulses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadState {
    last_click: [Option<u64>; 2],
    window: u64,
}

impl DeadState {
    /// A detector that clicked at pulse `k` ignores pulses `k + j` with
    /// `j / pulse_rate < dead_time`.
    pub fn new(dead_time: f64, pulse_rate: f64) -> Self {
        let window = (dead_time * pulse_rate * (1.0 - 1e-12)).ceil().max(0.0) as u64;
        Self {
            last_click: [None, None],
            window,
        }
    }

    /// Pulses following a click during which a detector stays blind, plus one.
    pub fn window(&self) -> u64 {
        self.window
    }

    /// Applies dead time to the raw clicks of pulse `index` and records the
    /// surviving clicks.
    pub fn gate(&mut self, index: u64, raw: Clicks) -> Outcome {
        let mut fire = [raw.d0, raw.d1];
        for (slot, f) in self.last_click.iter_mut().zip(fire.iter_mut()) {
            if *f {
                let alive = slot.is_none_or(|last| index - last >= self.window);
                if alive {
                    *slot = Some(index);
                } else {
                    *f = false;
                }
            }
        }
        Outcome::from_clicks(fire[0], fire[1])
    }
}

/// Full detection of one pulse: raw clicks then dead time.
pub fn detect<R: rand_core::RngCore>(
    index: u64,
    photons: u32,
    p0: f64,
    p1: f64,
    det: &DetectorParams,
    rng: &mut R,
    dead: &mut DeadState,
) -> Outcome {
    dead.gate(index, raw_clicks(photons, p0, p1, det, rng))
}

/// Default number of pulses per parallel work unit.
pub const DEFAULT_CHUNK: usize = 1 << 16;

/// Configured source plus measurement device.
#[derive(Debug, Clone)]
pub struct Simulator {
    source: Source,
    detector: DetectorParams,
    config: MeasurementConfig,
    probs_x: (f64, f64),
    probs_z: (f64, f64),
}

impl Simulator {
    pub fn new(source: Source, detector: DetectorParams, config: MeasurementConfig) -> Result<Self> {
        detector.validate()?;
        config.validate()?;
        let state = source.state();
        let probs_x = effective_projection_probs(&state, Basis::X, &config)?;
        let probs_z = effective_projection_probs(&state, Basis::Z, &config)?;
        Ok(Self {
            source,
            detector,
            config,
            probs_x,
            probs_z,
        })
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn detector(&self) -> &DetectorParams {
        &self.detector
    }

    pub fn config(&self) -> &MeasurementConfig {
        &self.config
    }

    pub fn projection_probs(&self, basis: Basis) -> (f64, f64) {
        match basis {
            Basis::X => self.probs_x,
            Basis::Z => self.probs_z,
        }
    }

    /// Basis and raw clicks of pulse `index`; independent of every other pulse.
    pub fn raw_pulse(&self, seed: u64, index: u64) -> (Basis, Clicks) {
        let basis = choose_basis(self.config.basis_seed, index, self.config.prob_x);
        let (photons, _) = self.source.sample_pulse(seed, index);
        let (p0, p1) = self.projection_probs(basis);
        let mut rng = CounterRng::new(seed, stream::DETECTOR, index);
        (basis, raw_clicks(photons, p0, p1, &self.detector, &mut rng))
    }

    fn dead_state(&self) -> DeadState {
        DeadState::new(self.detector.dead_time, self.source.params().pulse_rate)
    }

    /// Pulse-by-pulse reference path.
    pub fn run_serial(&self, n_pulses: u64, seed: u64) -> EventStream {
        let mut dead = self.dead_state();
        let codes = (0..n_pulses)
            .map(|i| {
                let (basis, raw) = self.raw_pulse(seed, i);
                encode(basis, dead.gate(i, raw))
            })
            .collect();
        EventStream {
            indices: Indices::Contiguous { start: 0 },
            codes,
        }
    }

    /// Parallel path: raw clicks are generated per chunk on the thread pool,
    /// then dead time is applied in one ordered pass, so the result is
    /// identical to [`Simulator::run_serial`] for every chunk size.
    pub fn run_chunked(&self, n_pulses: u64, seed: u64, chunk: usize) -> EventStream {
        let chunk = chunk.max(1) as u64;
        let n_chunks = n_pulses.div_ceil(chunk);
        let raw: Vec<u8> = (0..n_chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let lo = c * chunk;
                let hi = (lo + chunk).min(n_pulses);
                (lo..hi).map(move |i| {
                    let (basis, clicks) = self.raw_pulse(seed, i);
                    encode(basis, Outcome::from_clicks(clicks.d0, clicks.d1))
                })
            })
            .collect();
        let mut dead = self.dead_state();
        let codes = if dead.window() <= 1 {
            // no pulse can fall inside a dead window
            raw
        } else {
            raw.into_iter()
                .enumerate()
                .map(|(i, code)| {
                    let (basis, outcome) = decode(code).expect("encoded above");
                    let clicks = Clicks {
                        d0: matches!(outcome, Outcome::D0 | Outcome::Double),
                        d1: matches!(outcome, Outcome::D1 | Outcome::Double),
                    };
                    encode(basis, dead.gate(i as u64, clicks))
                })
                .collect()
        };
        EventStream {
            indices: Indices::Contiguous { start: 0 },
            codes,
        }
    }

    pub fn run(&self, n_pulses: u64, seed: u64) -> EventStream {
        self.run_chunked(n_pulses, seed, DEFAULT_CHUNK)
    }
}

/// Composes source, detector and measurement settings and simulates
/// `n_pulses` pulses.
pub fn run_simulation(
    source: Source,
    detector: DetectorParams,
    config: MeasurementConfig,
    n_pulses: u64,
    seed: u64,
) -> Result<EventStream> {
    Ok(Simulator::new(source, detector, config)?.run(n_pulses, seed))
}

fn count_codes(codes: &[u8]) -> TallySummary {
    // histogram over the 8 valid codes
    let mut hist = [0u64; 8];
    for &c in codes {
        hist[usize::from(c & 7)] += 1;
    }
    let z = |o: Outcome| hist[usize::from(encode(Basis::Z, o))];
    let x = |o: Outcome| hist[usize::from(encode(Basis::X, o))];
    let pulses_z = z(Outcome::None) + z(Outcome::D0) + z(Outcome::D1) + z(Outcome::Double);
    let pulses_x = x(Outcome::None) + x(Outcome::D0) + x(Outcome::D1) + x(Outcome::Double);
    TallySummary {
        pulses_total: pulses_x + pulses_z,
        pulses_x,
        pulses_z,
        detected_x: x(Outcome::D0) + x(Outcome::D1) + x(Outcome::Double),
        detected_z: z(Outcome::D0) + z(Outcome::D1),
        x_wrong_singles: x(Outcome::D1),
        x_doubles: x(Outcome::Double),
        z_doubles_discarded: z(Outcome::Double),
    }
}

/// Counts without the non-empty X check.
pub fn count(events: &EventStream) -> TallySummary {
    events
        .codes
        .par_chunks(DEFAULT_CHUNK)
        .map(count_codes)
        .reduce(TallySummary::default, TallySummary::merge)
}

/// Finite-size counts under the discard policy: in X, D1 singles are errors
/// and doubles are half errors, both kept in n_X; in Z, doubles and empty
/// pulses are discarded.
pub fn tally(events: &EventStream) -> Result<TallySummary> {
    let t = count(events);
    if t.detected_x == 0 {
        return Err(Error::EmptyXBasis);
    }
    Ok(t)
}

/// Raw key: Z-basis single clicks in pulse order, D0 -> 0, D1 -> 1.
pub fn raw_key(events: &EventStream) -> BitString {
    let d0 = encode(Basis::Z, Outcome::D0);
    let d1 = encode(Basis::Z, Outcome::D1);
    events
        .codes
        .iter()
        .filter(|&&c| c == d0 || c == d1)
        .map(|&c| c == d1)
        .collect()
}
