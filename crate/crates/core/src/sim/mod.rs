//! Monte Carlo validation harness: draws responses and actual effects,
//! estimates power and MDEs by noisy bisection, builds bootstrap intervals and
//! checks how well the closed forms are calibrated.

pub mod bisection;
pub mod bootstrap;
pub mod calibration;
pub mod power;
pub mod rng;
pub mod sampling;

use thiserror::Error;

use crate::engine::EngineError;

pub use bisection::{
    noisy_bisection, noisy_bisection_mde, AnalyticPower, BisectionOptions, PowerCurve, SimulatedPower,
};
pub use bootstrap::{bootstrap_interval, BootstrapInterval};
pub use calibration::{random_population, run_calibration, CalibrationReport, EvaluationConfig, ParameterRanges};
pub use power::{estimate_power, estimate_power_with, CriticalValue};
pub use sampling::{sample_actual_effect, sample_responses, GroupResponses, SamplingPlan, Simulator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 samples for a bootstrap interval, got {0}")]
    TooFewSamples(usize),
    #[error(
        "bracket [{lo}, {hi}] does not contain the target power {target}: power at the upper end is not above it; \
         widen the bracket"
    )]
    Bracket { lo: f64, hi: f64, target: f64 },
}

impl From<crate::model::ModelError> for SimError {
    fn from(e: crate::model::ModelError) -> Self {
        SimError::Engine(e.into())
    }
}
