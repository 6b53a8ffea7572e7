//! Drawing responses and actual effects for one setup.
//!
//! Each analysis group takes `floor(n_g * share)` users from every member
//! combination. Components with no users are skipped, so with `n0 = 0` the
//! all-samples and qualified-only setups draw identically.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::engine::{effect_summary, SetupKind};
use crate::model::{GroupScenario, PopulationSpec, TestConfig};

use super::rng::{stream, Purpose};
use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub scenario: GroupScenario,
    pub count: u64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedGroup {
    pub label: &'static str,
    pub contrast: f64,
    pub components: Vec<Component>,
    pub count: u64,
}

/// Integer user counts for every analysis group of a setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub setup: SetupKind,
    pub groups: Vec<PlannedGroup>,
}

impl SamplingPlan {
    pub fn new(spec: &PopulationSpec, setup: SetupKind) -> Result<Self, SimError> {
        let lattice = spec.lattice()?;
        setup.check_applicable(spec)?;
        let mut groups = Vec::new();
        for layout in setup.layout() {
            let components: Vec<Component> = layout
                .members
                .iter()
                .filter_map(|&g| {
                    let count = (lattice.n.get(g.user_group()) * layout.share).floor() as u64;
                    (count > 0).then(|| Component {
                        scenario: g,
                        count,
                        mean: lattice.mean(g),
                        sd: lattice.var(g).sqrt(),
                    })
                })
                .collect();
            let count = components.iter().map(|c| c.count).sum();
            if count == 0 {
                return Err(SimError::Engine(crate::engine::EngineError::Inapplicable {
                    setup,
                    reason: format!("analysis group {} has no users after rounding down", layout.label),
                }));
            }
            groups.push(PlannedGroup {
                label: layout.label,
                contrast: layout.contrast,
                components,
                count,
            });
        }
        Ok(Self { setup, groups })
    }

    /// One draw of the effect estimate. Each component's response total is
    /// drawn from its exact normal law, which is equivalent to summing the
    /// individual responses.
    pub fn draw_effect<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut d = 0.0;
        for g in &self.groups {
            let mut total = 0.0;
            for c in &g.components {
                let k = c.count as f64;
                let z: f64 = StandardNormal.sample(rng);
                total += k * c.mean + k.sqrt() * c.sd * z;
            }
            d += g.contrast * total / g.count as f64;
        }
        d
    }

    /// Individual responses, one vector per analysis group.
    pub fn draw_responses<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<GroupResponses> {
        self.groups
            .iter()
            .map(|g| {
                let mut values = Vec::with_capacity(g.count as usize);
                for c in &g.components {
                    let normal = Normal::new(c.mean, c.sd).expect("validated moments");
                    values.extend((0..c.count).map(|_| normal.sample(rng)));
                }
                GroupResponses {
                    label: g.label.to_string(),
                    contrast: g.contrast,
                    values,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResponses {
    pub label: String,
    pub contrast: f64,
    pub values: Vec<f64>,
}

impl GroupResponses {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn sample_responses(spec: &PopulationSpec, setup: SetupKind, seed: u64) -> Result<Vec<GroupResponses>, SimError> {
    let plan = SamplingPlan::new(spec, setup)?;
    Ok(plan.draw_responses(&mut stream(seed, Purpose::Responses, &[])))
}

/// One draw of the actual effect estimate.
pub fn sample_actual_effect(spec: &PopulationSpec, setup: SetupKind, seed: u64) -> Result<f64, SimError> {
    let plan = SamplingPlan::new(spec, setup)?;
    Ok(plan.draw_effect(&mut stream(seed, Purpose::Effect, &[])))
}

/// A sampling plan together with the theoretical quantities it is checked against.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub plan: SamplingPlan,
    pub delta: f64,
    pub theta_star: f64,
    pub sigma_dbar: f64,
    pub cfg: TestConfig,
}

impl Simulator {
    pub fn new(spec: &PopulationSpec, setup: SetupKind, cfg: &TestConfig) -> Result<Self, SimError> {
        let summary = effect_summary(setup, spec, cfg)?;
        Ok(Self {
            plan: SamplingPlan::new(spec, setup)?,
            delta: summary.delta,
            theta_star: summary.theta_star,
            sigma_dbar: summary.sigma_dbar,
            cfg: *cfg,
        })
    }
}
