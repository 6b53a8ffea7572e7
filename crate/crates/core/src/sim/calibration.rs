//! Calibration of the closed-form effect and MDE against simulation.
//!
//! Every evaluation draws a random population, samples the actual effect and
//! (optionally) the MDE many times, and records whether the theoretical value
//! falls inside the 95% bootstrap interval of the sample mean, plus its
//! percentile rank among the bootstrap means.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::SetupKind;
use crate::model::{GroupScenario, GroupSizes, PopulationSpec, TestConfig};

use super::bisection::simulated_mde;
use super::bootstrap::{bootstrap_interval, BootstrapInterval};
use super::power::CriticalValue;
use super::rng::{derive_seed, stream, Purpose};
use super::sampling::Simulator;
use super::SimError;

/// Number of bins in the rank histograms.
pub const RANK_BINS: usize = 20;

/// Half-width multiplier of the exact 95% interval of a sample mean.
const EXACT_Z: f64 = 1.96;

/// `[min, max]` for each randomly drawn quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParameterRanges {
    /// User-group sizes; drawn as multiples of 4 so every analysis group
    /// split is exact.
    pub n: [f64; 2],
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            n: [1e3, 1e5],
            mean: [-10.0, 10.0],
            var: [0.25, 25.0],
        }
    }
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        for (name, [lo, hi]) in [("n", self.n), ("mean", self.mean), ("var", self.var)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!(
                    "parameter_ranges.{name}: need finite min < max, got [{lo}, {hi}]"
                ));
            }
        }
        if self.n[0] < 0.0 {
            return bad(format!(
                "parameter_ranges.n: sizes must be non-negative, got min {}",
                self.n[0]
            ));
        }
        if (self.n[0] / 4.0).ceil() > (self.n[1] / 4.0).floor() {
            return bad(format!(
                "parameter_ranges.n: [{}, {}] contains no multiple of 4",
                self.n[0], self.n[1]
            ));
        }
        if self.var[0] <= 0.0 {
            return bad(format!(
                "parameter_ranges.var: variances must be positive, got min {}",
                self.var[0]
            ));
        }
        Ok(())
    }
}

/// Draws a population with sizes, means and variances uniform over `ranges`.
pub fn random_population<R: Rng + ?Sized>(ranges: &ParameterRanges, rng: &mut R) -> PopulationSpec {
    let (lo, hi) = ((ranges.n[0] / 4.0).ceil() as u64, (ranges.n[1] / 4.0).floor() as u64);
    let mut size = || 4.0 * rng.random_range(lo..=hi) as f64;
    let n = GroupSizes::new(size(), size(), size(), size());
    let mut spec = PopulationSpec::uniform(n, 0.0, 1.0);
    for g in GroupScenario::ALL {
        let mean = rng.random_range(ranges.mean[0]..=ranges.mean[1]);
        let var = rng.random_range(ranges.var[0]..=ranges.var[1]);
        spec.set(g, mean, var);
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub seed: u64,
    pub n_evaluations: usize,
    pub n_effect_samples: usize,
    pub n_mde_samples: usize,
    pub n_bootstrap: usize,
    pub max_bisections: usize,
    pub per_comparison_alpha: f64,
    /// Simulated experiments behind one power estimate.
    pub power_batch_reps: usize,
    /// Most power estimates taken at one bisection point.
    pub max_batches: usize,
    /// Upper end of the bisection bracket, as a multiple of the theoretical MDE.
    pub bracket_multiple: f64,
    pub critical_value: CriticalValue,
    /// Null runs behind a sampled critical value.
    pub null_samples: usize,
    pub sample_mde: bool,
    pub parameter_ranges: ParameterRanges,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_evaluations: 20,
            n_effect_samples: 1000,
            n_mde_samples: 100,
            n_bootstrap: 1000,
            max_bisections: 10,
            per_comparison_alpha: 0.01,
            power_batch_reps: 200,
            max_batches: 30,
            bracket_multiple: 4.0,
            critical_value: CriticalValue::Analytic,
            null_samples: 10_000,
            sample_mde: true,
            parameter_ranges: ParameterRanges::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("n_evaluations", self.n_evaluations),
            ("n_effect_samples", self.n_effect_samples),
            ("n_mde_samples", self.n_mde_samples),
            ("n_bootstrap", self.n_bootstrap),
            ("max_bisections", self.max_bisections),
            ("power_batch_reps", self.power_batch_reps),
            ("null_samples", self.null_samples),
        ] {
            if v == 0 {
                return Err(SimError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.max_batches < 2 {
            return Err(SimError::InvalidConfig(format!(
                "max_batches must be at least 2, got {}",
                self.max_batches
            )));
        }
        if !(self.per_comparison_alpha > 0.0 && self.per_comparison_alpha < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "per_comparison_alpha must lie in (0, 1), got {}",
                self.per_comparison_alpha
            )));
        }
        if !(self.bracket_multiple.is_finite() && self.bracket_multiple > 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "bracket_multiple must be finite and above 1, got {}",
                self.bracket_multiple
            )));
        }
        self.parameter_ranges.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub delta: f64,
    pub theta_star: f64,
    pub sigma_dbar: f64,
}

/// Bootstrap check of one theoretical quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityCheck {
    pub sample_mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Percentile rank of the theoretical value among the bootstrap means.
    pub rank: f64,
    pub in_interval: bool,
}

impl QuantityCheck {
    fn new(b: &BootstrapInterval, theory: f64) -> Self {
        Self {
            sample_mean: b.mean,
            lo: b.lo,
            hi: b.hi,
            rank: b.rank(theory),
            in_interval: b.contains(theory),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub setup: SetupKind,
    pub index: usize,
    pub spec_fingerprint: u64,
    pub theory: Option<Theory>,
    pub effect: Option<QuantityCheck>,
    /// Theoretical effect inside `mean +- 1.96 sigma_dbar / sqrt(n_effect_samples)`.
    pub exact_effect_in_interval: Option<bool>,
    pub mde: Option<QuantityCheck>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub inside: usize,
    pub total: usize,
    pub pct: f64,
    /// `"in/total (pct%)"`.
    pub display: String,
}

impl Coverage {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Self {
        let (mut inside, mut total) = (0, 0);
        for f in flags {
            total += 1;
            inside += f as usize;
        }
        let pct = if total == 0 {
            0.0
        } else {
            100.0 * inside as f64 / total as f64
        };
        Self {
            inside,
            total,
            pct,
            display: format!("{inside}/{total} ({pct:.2}%)"),
        }
    }
}

/// Uniformity diagnostics for percentile ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub bins: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
    pub ks_distance: f64,
    /// Fraction of ranks in the outermost bin on either side.
    pub edge_mass: f64,
    pub expected_edge_mass: f64,
    /// Edge mass more than three binomial standard errors above expectation,
    /// the signature of an interval that is too narrow.
    pub u_shaped: bool,
}

impl RankDiagnostics {
    pub fn new(ranks: &[f64]) -> Self {
        let mut bins = vec![0usize; RANK_BINS];
        for &r in ranks {
            bins[((r * RANK_BINS as f64) as usize).min(RANK_BINS - 1)] += 1;
        }
        let expected_edge_mass = 2.0 / RANK_BINS as f64;
        let n = ranks.len();
        if n == 0 {
            return Self {
                bins,
                chi_square: 0.0,
                p_value: 1.0,
                ks_distance: 0.0,
                edge_mass: 0.0,
                expected_edge_mass,
                u_shaped: false,
            };
        }
        let nf = n as f64;
        let e = nf / RANK_BINS as f64;
        let chi_square: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        let p_value = ChiSquared::new((RANK_BINS - 1) as f64)
            .expect("positive dof")
            .sf(chi_square);

        let mut sorted = ranks.to_vec();
        sorted.sort_by(f64::total_cmp);
        let ks_distance = sorted
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64 / nf - r).max(r - i as f64 / nf))
            .fold(0.0, f64::max);

        let edge_mass = (bins[0] + bins[RANK_BINS - 1]) as f64 / nf;
        let se = (expected_edge_mass * (1.0 - expected_edge_mass) / nf).sqrt();
        Self {
            bins,
            chi_square,
            p_value,
            ks_distance,
            edge_mass,
            expected_edge_mass,
            u_shaped: edge_mass > expected_edge_mass + 3.0 * se,
        }
    }
}

/// One row of the coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupAggregate {
    pub setup: SetupKind,
    pub evaluations: usize,
    pub failures: usize,
    pub effect: Coverage,
    pub exact_effect: Coverage,
    pub mde: Option<Coverage>,
    pub effect_ranks: RankDiagnostics,
    pub mde_ranks: Option<RankDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: EvaluationConfig,
    pub test_config: TestConfig,
    pub setups: Vec<SetupKind>,
    pub records: Vec<EvaluationRecord>,
    pub aggregate: Vec<SetupAggregate>,
}

impl CalibrationReport {
    /// Rebuilds the per-setup aggregate from the stored records.
    pub fn recompute_aggregate(&mut self) {
        self.aggregate = build_aggregate(&self.setups, &self.records, self.config.sample_mde);
    }

    /// Plain-text coverage table, one row per setup.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>22} {:>22} {:>22} {:>9} {:>6}",
            "setup", "actual effect (BRCI)", "actual effect (exact)", "MDE (BRCI)", "KS", "U"
        );
        for a in &self.aggregate {
            let mde = a.mde.as_ref().map_or_else(|| "-".to_string(), |c| c.display.clone());
            let _ = writeln!(
                out,
                "{:<18} {:>22} {:>22} {:>22} {:>9.4} {:>6}",
                a.setup.name(),
                a.effect.display,
                a.exact_effect.display,
                mde,
                a.effect_ranks.ks_distance,
                if a.effect_ranks.u_shaped { "yes" } else { "no" }
            );
        }
        out
    }
}

fn evaluate(eval: &EvaluationConfig, cfg: &TestConfig, setup: SetupKind, index: usize) -> EvaluationRecord {
    let spec = random_population(
        &eval.parameter_ranges,
        &mut stream(eval.seed, Purpose::Population, &[index as u64]),
    );
    let mut record = EvaluationRecord {
        setup,
        index,
        spec_fingerprint: spec.fingerprint(),
        theory: None,
        effect: None,
        exact_effect_in_interval: None,
        mde: None,
        error: None,
    };
    let sim = match Simulator::new(&spec, setup, cfg) {
        Ok(sim) => sim,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.theory = Some(Theory {
        delta: sim.delta,
        theta_star: sim.theta_star,
        sigma_dbar: sim.sigma_dbar,
    });
    let key = [setup.number() as u64, index as u64];

    let mut rng = stream(eval.seed, Purpose::Effect, &key);
    let draws: Vec<f64> = (0..eval.n_effect_samples)
        .map(|_| sim.plan.draw_effect(&mut rng))
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let half = EXACT_Z * sim.sigma_dbar / (draws.len() as f64).sqrt();
    record.exact_effect_in_interval = Some((sim.delta - mean).abs() <= half);

    let mut errors = Vec::new();
    match bootstrap_interval(
        &draws,
        eval.n_bootstrap,
        derive_seed(eval.seed, Purpose::Bootstrap, &[key[0], key[1], 0]),
    ) {
        Ok(b) => record.effect = Some(QuantityCheck::new(&b, sim.delta)),
        Err(e) => errors.push(format!("actual effect: {e}")),
    }

    if eval.sample_mde {
        let mdes: Result<Vec<f64>, SimError> = (0..eval.n_mde_samples as u64)
            .map(|j| {
                simulated_mde(
                    &sim,
                    eval,
                    derive_seed(eval.seed, Purpose::Bisection, &[key[0], key[1], j]),
                )
            })
            .collect();
        match mdes.and_then(|m| {
            bootstrap_interval(
                &m,
                eval.n_bootstrap,
                derive_seed(eval.seed, Purpose::Bootstrap, &[key[0], key[1], 1]),
            )
        }) {
            Ok(b) => record.mde = Some(QuantityCheck::new(&b, sim.theta_star)),
            Err(e) => errors.push(format!("MDE: {e}")),
        }
    }
    if !errors.is_empty() {
        record.error = Some(errors.join("; "));
    }
    record
}

fn aggregate(setup: SetupKind, records: &[&EvaluationRecord], sample_mde: bool) -> SetupAggregate {
    let effect_ranks: Vec<f64> = records.iter().filter_map(|r| r.effect.map(|c| c.rank)).collect();
    let mde_ranks: Vec<f64> = records.iter().filter_map(|r| r.mde.map(|c| c.rank)).collect();
    SetupAggregate {
        setup,
        evaluations: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        effect: Coverage::from_flags(records.iter().filter_map(|r| r.effect.map(|c| c.in_interval))),
        exact_effect: Coverage::from_flags(records.iter().filter_map(|r| r.exact_effect_in_interval)),
        mde: sample_mde.then(|| Coverage::from_flags(records.iter().filter_map(|r| r.mde.map(|c| c.in_interval)))),
        effect_ranks: RankDiagnostics::new(&effect_ranks),
        mde_ranks: sample_mde.then(|| RankDiagnostics::new(&mde_ranks)),
    }
}

fn build_aggregate(setups: &[SetupKind], records: &[EvaluationRecord], sample_mde: bool) -> Vec<SetupAggregate> {
    setups
        .iter()
        .map(|&s| {
            let rs: Vec<&EvaluationRecord> = records.iter().filter(|r| r.setup == s).collect();
            aggregate(s, &rs, sample_mde)
        })
        .collect()
}

/// Runs every (setup, evaluation) pair in parallel. Results depend only on the
/// configs, never on thread scheduling.
pub fn run_calibration(
    eval: &EvaluationConfig,
    setups: &[SetupKind],
    cfg: &TestConfig,
) -> Result<CalibrationReport, SimError> {
    eval.validate()?;
    cfg.validate()?;
    let tasks: Vec<(SetupKind, usize)> = setups
        .iter()
        .flat_map(|&s| (0..eval.n_evaluations).map(move |i| (s, i)))
        .collect();
    let records: Vec<EvaluationRecord> = tasks.par_iter().map(|&(s, i)| evaluate(eval, cfg, s, i)).collect();
    let aggregate = build_aggregate(setups, &records, eval.sample_mde);
    Ok(CalibrationReport {
        config: eval.clone(),
        test_config: *cfg,
        setups: setups.to_vec(),
        records,
        aggregate,
    })
}
