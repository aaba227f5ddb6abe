//! Split conformal prediction for classifiers.
//!
//! The crate covers the full pipeline: datasets of model outputs in a
//! probability, logit or feature domain ([`data`]), non-conformity scores
//! ([`scores`]), marginal and class-conditional calibration
//! ([`calibration`]), prediction sets ([`prediction`]) and the evaluation
//! metrics used to compare score functions ([`evaluation`]).

pub mod calibration;
pub mod config;
pub mod data;
pub mod distance;
pub mod error;
pub mod evaluation;
pub mod nettail;
pub mod prediction;
pub mod rng;
pub mod scores;

pub use calibration::{
    calibrate, finite_sample_quantile, CalibratedPredictor, CalibrationMode, Thresholds,
};
pub use data::{Dataset, DomainTag};
pub use distance::Metric;
pub use error::{CpError, Result};
pub use nettail::NetworkTail;
pub use prediction::PredictionSet;
pub use scores::{ScoreConfig, ScoreKind, Scorer, UMode};
