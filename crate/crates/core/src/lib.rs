//! Analytic and simulation tools for choosing an experiment setup when
//! comparing two personalization strategies in an online controlled experiment.

pub mod cli;
pub mod engine;
pub mod model;
pub mod rules;
pub mod sim;

pub use engine::{effect_summary, EffectSummary, EngineError, SetupKind};
pub use model::{GroupScenario, GroupSizes, PopulationSpec, ResponseMoments, TestConfig};
pub use rules::{compare, ComparisonVerdict, Criterion};
