//! Bisection for the MDE on a noisy power curve.
//!
//! Each midpoint is compared against the target power with a one-sided
//! t-test over repeated power estimates. More estimates are taken until the
//! test is significant or the batch cap is reached, in which case the point
//! estimate decides.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{power_for_sigma, SetupKind};
use crate::model::{PopulationSpec, TestConfig};

use super::calibration::EvaluationConfig;
use super::rng::{stream, Purpose};
use super::sampling::Simulator;
use super::SimError;

/// A possibly noisy estimate of test power as a function of the true effect.
pub trait PowerCurve {
    fn sample(&mut self, theta: f64) -> f64;
}

/// Exact power; bisection on it is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticPower {
    pub sigma_dbar: f64,
    pub cfg: TestConfig,
}

impl PowerCurve for AnalyticPower {
    fn sample(&mut self, theta: f64) -> f64 {
        power_for_sigma(self.sigma_dbar, theta, &self.cfg)
    }
}

/// Monte Carlo power from batches of simulated experiments; every call uses a
/// fresh stream.
#[derive(Debug, Clone)]
pub struct SimulatedPower<'a> {
    sim: &'a Simulator,
    reps: usize,
    critical: f64,
    seed: u64,
    calls: u64,
}

impl<'a> SimulatedPower<'a> {
    pub fn new(sim: &'a Simulator, reps: usize, critical: f64, seed: u64) -> Self {
        Self {
            sim,
            reps: reps.max(1),
            critical,
            seed,
            calls: 0,
        }
    }
}

impl PowerCurve for SimulatedPower<'_> {
    fn sample(&mut self, theta: f64) -> f64 {
        let mut rng = stream(self.seed, Purpose::Bisection, &[self.calls]);
        self.calls += 1;
        self.sim.rejection_rate(theta, self.reps, self.critical, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub max_bisections: usize,
    pub per_comparison_alpha: f64,
    /// Most power estimates taken at one point.
    pub max_batches: usize,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            max_bisections: 10,
            per_comparison_alpha: 0.01,
            max_batches: 30,
        }
    }
}

/// Whether power at `theta` is judged to reach `target`.
fn reaches_target(curve: &mut dyn PowerCurve, theta: f64, target: f64, opts: &BisectionOptions) -> bool {
    let cap = opts.max_batches.max(2);
    let mut xs = vec![curve.sample(theta), curve.sample(theta)];
    loop {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if sd == 0.0 {
            return mean >= target;
        }
        let t = (mean - target) / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
        if dist.sf(t) < opts.per_comparison_alpha {
            return true;
        }
        if dist.cdf(t) < opts.per_comparison_alpha {
            return false;
        }
        if xs.len() >= cap {
            return mean >= target;
        }
        xs.push(curve.sample(theta));
    }
}

/// Smallest effect whose power reaches `target`, searched on `[lo, hi]`.
pub fn noisy_bisection(
    curve: &mut dyn PowerCurve,
    target: f64,
    lo: f64,
    hi: f64,
    opts: &BisectionOptions,
) -> Result<f64, SimError> {
    if !reaches_target(curve, hi, target, opts) {
        return Err(SimError::Bracket { lo, hi, target });
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..opts.max_bisections {
        let mid = 0.5 * (a + b);
        if reaches_target(curve, mid, target, opts) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// One simulated MDE estimate for a prepared simulator.
pub(crate) fn simulated_mde(sim: &Simulator, eval: &EvaluationConfig, seed: u64) -> Result<f64, SimError> {
    let critical = sim.critical_value(eval.critical_value, eval.null_samples, seed);
    let mut curve = SimulatedPower::new(sim, eval.power_batch_reps, critical, seed);
    let opts = BisectionOptions {
        max_bisections: eval.max_bisections,
        per_comparison_alpha: eval.per_comparison_alpha,
        max_batches: eval.max_batches,
    };
    noisy_bisection(
        &mut curve,
        sim.cfg.pi_min,
        0.0,
        eval.bracket_multiple * sim.theta_star,
        &opts,
    )
}

/// One MDE estimate by noisy bisection on the simulated power curve, over the
/// bracket `[0, bracket_multiple * theta*]`.
pub fn noisy_bisection_mde(
    spec: &PopulationSpec,
    setup: SetupKind,
    cfg: &TestConfig,
    eval: &EvaluationConfig,
    seed: u64,
) -> Result<f64, SimError> {
    eval.validate()?;
    simulated_mde(&Simulator::new(spec, setup, cfg)?, eval, seed)
}
