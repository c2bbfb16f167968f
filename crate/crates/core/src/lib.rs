//! Source-independent quantum random number generation toolkit.
//!
//! Core math is generic over [`scalar::Real`]; the aliases below fix it to
//! `f64`, which is what the CLI uses.

pub mod bits;
pub mod cli;
pub mod detector;
pub mod error;
pub mod extractor;
pub mod io;
pub mod optimizer;
pub mod protocol;
pub mod rng;
pub mod scalar;
pub mod source;
pub mod stats;

pub use bits::BitString;
pub use error::{Error, Result};
pub use scalar::Real;

pub type Estimate = protocol::Estimate<f64>;
pub type RateBreakdown = protocol::RateBreakdown<f64>;
pub type SecurityParams = protocol::SecurityParams<f64>;
pub type MeasurementImperfection = protocol::MeasurementImperfection<f64>;
pub type Calibration = protocol::Calibration<f64>;
pub type ThetaChoice = protocol::ThetaChoice<f64>;
pub type RateModelParams = optimizer::RateModelParams<f64>;
