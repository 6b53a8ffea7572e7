//! Closed-form actual effect size and minimum detectable effect (MDE) for the
//! four canonical experiment setups.
//!
//! Every setup is described as a list of analysis groups. Each analysis group
//! takes a fixed share of some user groups, each observed under one scenario,
//! and the effect estimate is a signed sum of the analysis-group means. All
//! random splits are 50/50.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    normal_sf, z_margin, AnalysisGroupMixture, GroupScenario, Lattice, ModelError, PopulationSpec, TestConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{setup} is not applicable: {reason}")]
    Inapplicable { setup: SetupKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetupKind {
    /// Setup 1: only users qualifying for both strategies.
    IntersectionOnly,
    /// Setup 2: every user, diluted by group 0.
    AllSamples,
    /// Setup 3: users qualifying for at least one strategy.
    QualifiedOnly,
    /// Setup 4: dual control, a difference of two incrementality tests.
    DualControl,
}

impl SetupKind {
    pub const ALL: [SetupKind; 4] = [
        SetupKind::IntersectionOnly,
        SetupKind::AllSamples,
        SetupKind::QualifiedOnly,
        SetupKind::DualControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetupKind::IntersectionOnly => "intersection-only",
            SetupKind::AllSamples => "all-samples",
            SetupKind::QualifiedOnly => "qualified-only",
            SetupKind::DualControl => "dual-control",
        }
    }

    /// 1-based setup number.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    /// The analysis groups of this setup.
    pub fn layout(self) -> &'static [GroupLayout] {
        use GroupScenario::*;
        const HALF: f64 = 0.5;
        const QUARTER: f64 = 0.25;
        match self {
            SetupKind::IntersectionOnly => &[
                GroupLayout {
                    label: "A",
                    share: HALF,
                    contrast: -1.0,
                    members: &[IPhi],
                },
                GroupLayout {
                    label: "B",
                    share: HALF,
                    contrast: 1.0,
                    members: &[IPsi],
                },
            ],
            SetupKind::AllSamples => &[
                GroupLayout {
                    label: "A",
                    share: HALF,
                    contrast: -1.0,
                    members: &[C0, I1, C2, IPhi],
                },
                GroupLayout {
                    label: "B",
                    share: HALF,
                    contrast: 1.0,
                    members: &[C0, C1, I2, IPsi],
                },
            ],
            SetupKind::QualifiedOnly => &[
                GroupLayout {
                    label: "A",
                    share: HALF,
                    contrast: -1.0,
                    members: &[I1, C2, IPhi],
                },
                GroupLayout {
                    label: "B",
                    share: HALF,
                    contrast: 1.0,
                    members: &[C1, I2, IPsi],
                },
            ],
            SetupKind::DualControl => &[
                GroupLayout {
                    label: "A1",
                    share: QUARTER,
                    contrast: 1.0,
                    members: &[C1, C3],
                },
                GroupLayout {
                    label: "A2",
                    share: QUARTER,
                    contrast: -1.0,
                    members: &[I1, IPhi],
                },
                GroupLayout {
                    label: "B1",
                    share: QUARTER,
                    contrast: -1.0,
                    members: &[C2, C3],
                },
                GroupLayout {
                    label: "B2",
                    share: QUARTER,
                    contrast: 1.0,
                    members: &[I2, IPsi],
                },
            ],
        }
    }

    /// Checks the size preconditions of this setup.
    pub fn check_applicable(self, spec: &PopulationSpec) -> Result<(), EngineError> {
        let n = spec.n;
        let fail = |reason: &str| {
            Err(EngineError::Inapplicable {
                setup: self,
                reason: reason.into(),
            })
        };
        match self {
            SetupKind::IntersectionOnly if n.g3 <= 0.0 => {
                fail("requires n3 > 0 (no users qualify for both strategies)")
            }
            SetupKind::AllSamples if n.total() <= 0.0 => fail("requires n0 + n1 + n2 + n3 > 0"),
            SetupKind::QualifiedOnly if n.qualified() <= 0.0 => fail("requires n1 + n2 + n3 > 0"),
            SetupKind::DualControl if n.g1 + n.g3 <= 0.0 => fail("requires n1 + n3 > 0"),
            SetupKind::DualControl if n.g2 + n.g3 <= 0.0 => fail("requires n2 + n3 > 0"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SetupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "intersection" | "intersection-only" => Ok(SetupKind::IntersectionOnly),
            "2" | "all" | "all-samples" => Ok(SetupKind::AllSamples),
            "3" | "qualified" | "qualified-only" => Ok(SetupKind::QualifiedOnly),
            "4" | "dual" | "dual-control" => Ok(SetupKind::DualControl),
            other => Err(format!(
                "unknown setup '{other}' (expected intersection, all-samples, qualified or dual-control)"
            )),
        }
    }
}

/// One analysis group: a `share` of each member's user group, observed under
/// the member's scenario. `contrast` is the group's sign in the effect estimate.
#[derive(Debug, Clone, Copy)]
pub struct GroupLayout {
    pub label: &'static str,
    pub share: f64,
    pub contrast: f64,
    pub members: &'static [GroupScenario],
}

impl GroupLayout {
    pub fn size(&self, lattice: &Lattice) -> f64 {
        self.share * self.members.iter().map(|g| lattice.n.get(g.user_group())).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub setup: SetupKind,
    /// Actual effect size.
    pub delta: f64,
    /// Minimum detectable effect, a positive magnitude.
    pub theta_star: f64,
    /// Standard deviation of the effect estimate.
    pub sigma_dbar: f64,
    pub groups: Vec<AnalysisGroupMixture>,
    pub population_fingerprint: u64,
    pub config_fingerprint: u64,
}

pub fn mixtures_for(setup: SetupKind, spec: &PopulationSpec) -> Result<Vec<AnalysisGroupMixture>, EngineError> {
    let lattice = spec.lattice()?;
    setup.check_applicable(spec)?;
    Ok(mixtures_from_lattice(setup, &lattice))
}

fn mixtures_from_lattice(setup: SetupKind, lattice: &Lattice) -> Vec<AnalysisGroupMixture> {
    setup
        .layout()
        .iter()
        .map(|layout| {
            let components: Vec<_> = layout
                .members
                .iter()
                .map(|&g| (lattice.n.get(g.user_group()), lattice.get(g)))
                .collect();
            AnalysisGroupMixture::from_components(layout.label, layout.size(lattice), &components)
                .expect("applicability check guarantees a non-empty group")
        })
        .collect()
}

pub fn effect_summary(setup: SetupKind, spec: &PopulationSpec, cfg: &TestConfig) -> Result<EffectSummary, EngineError> {
    cfg.validate()?;
    let groups = mixtures_for(setup, spec)?;
    let delta = setup
        .layout()
        .iter()
        .zip(&groups)
        .map(|(layout, g)| layout.contrast * g.mean)
        .sum();
    let sigma_dbar = groups
        .iter()
        .map(AnalysisGroupMixture::mean_variance)
        .sum::<f64>()
        .sqrt();
    Ok(EffectSummary {
        setup,
        delta,
        theta_star: z_margin(cfg) * sigma_dbar,
        sigma_dbar,
        groups,
        population_fingerprint: spec.fingerprint(),
        config_fingerprint: cfg.fingerprint(),
    })
}

/// Approximate power of the two-sided test when the true effect is `theta`:
/// `1 - Phi(z_{1-alpha/2} - |theta| / sigma_dbar)`.
pub fn power_at(summary: &EffectSummary, theta: f64, cfg: &TestConfig) -> f64 {
    power_for_sigma(summary.sigma_dbar, theta, cfg)
}

pub fn power_for_sigma(sigma_dbar: f64, theta: f64, cfg: &TestConfig) -> f64 {
    normal_sf(cfg.z_critical() - theta.abs() / sigma_dbar)
}

/// Finds the MDE by bisecting the analytic power curve. An independent check
/// on `theta_star`, not the production path.
pub fn mde_from_power_curve(sigma_dbar: f64, cfg: &TestConfig) -> f64 {
    let target = cfg.pi_min;
    let mut lo = 0.0;
    let mut hi = sigma_dbar;
    while power_for_sigma(sigma_dbar, hi, cfg) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if power_for_sigma(sigma_dbar, mid, cfg) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
