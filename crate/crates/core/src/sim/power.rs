//! Monte Carlo power of the two-sided z-test on the effect estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SetupKind;
use crate::model::{PopulationSpec, TestConfig};

use super::bootstrap::quantile_sorted;
use super::rng::{stream, Purpose};
use super::sampling::Simulator;
use super::SimError;

/// Where the rejection threshold of the test comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalValue {
    /// `z_{1-alpha/2}`.
    #[default]
    Analytic,
    /// The `1 - alpha` quantile of `|T|` over simulated null runs.
    Sampled,
}

impl Simulator {
    /// Rejection threshold for `|T|`.
    pub fn critical_value(&self, mode: CriticalValue, n_null: usize, seed: u64) -> f64 {
        match mode {
            CriticalValue::Analytic => self.cfg.z_critical(),
            CriticalValue::Sampled => {
                let mut rng = stream(seed, Purpose::NullCritical, &[]);
                let mut t: Vec<f64> = (0..n_null.max(1))
                    .map(|_| ((self.plan.draw_effect(&mut rng) - self.delta) / self.sigma_dbar).abs())
                    .collect();
                t.sort_by(f64::total_cmp);
                quantile_sorted(&t, 1.0 - self.cfg.alpha)
            }
        }
    }

    /// Fraction of `n_reps` simulated experiments whose test rejects when the
    /// true effect is `theta`. The simulated estimate is re-centred from the
    /// spec's own effect onto `theta`.
    pub fn rejection_rate<R: Rng + ?Sized>(&self, theta: f64, n_reps: usize, critical: f64, rng: &mut R) -> f64 {
        let rejections = (0..n_reps)
            .filter(|_| {
                let d = self.plan.draw_effect(rng) - self.delta + theta;
                (d / self.sigma_dbar).abs() > critical
            })
            .count();
        rejections as f64 / n_reps as f64
    }
}

/// Monte Carlo power at offset `theta` with the analytic critical value.
pub fn estimate_power(
    spec: &PopulationSpec,
    setup: SetupKind,
    cfg: &TestConfig,
    theta: f64,
    n_reps: usize,
    seed: u64,
) -> Result<f64, SimError> {
    estimate_power_with(spec, setup, cfg, theta, n_reps, seed, CriticalValue::Analytic)
}

pub fn estimate_power_with(
    spec: &PopulationSpec,
    setup: SetupKind,
    cfg: &TestConfig,
    theta: f64,
    n_reps: usize,
    seed: u64,
    critical: CriticalValue,
) -> Result<f64, SimError> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(SimError::InvalidConfig(format!(
            "theta must be finite and non-negative, got {theta}"
        )));
    }
    if n_reps == 0 {
        return Err(SimError::InvalidConfig("n_reps must be at least 1".into()));
    }
    let sim = Simulator::new(spec, setup, cfg)?;
    let c = sim.critical_value(critical, n_reps, seed);
    Ok(sim.rejection_rate(theta, n_reps, c, &mut stream(seed, Purpose::Power, &[])))
}
