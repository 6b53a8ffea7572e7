//! Population and test parameters, the group-scenario lattice, and the
//! standard-normal machinery used by the rest of the crate.
//!
//! Users fall into four disjoint groups: group 0 qualifies for neither
//! strategy, groups 1 and 2 for exactly one, and group 3 for both. Each group
//! is observed either at baseline (`C*`) or under a treatment (`I*`); group 3
//! can be treated under strategy 1 (`IPhi`) or strategy 2 (`IPsi`). Group 0 is
//! never treated.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("probability {0} is outside the open interval (0, 1)")]
    Domain(f64),
    #[error("invalid test configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid population: {}", join_violations(.0))]
    InvalidPopulation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// One user group crossed with the scenario it is observed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupScenario {
    C0,
    C1,
    I1,
    C2,
    I2,
    C3,
    #[serde(rename = "Iphi")]
    IPhi,
    #[serde(rename = "Ipsi")]
    IPsi,
}

impl GroupScenario {
    pub const ALL: [GroupScenario; 8] = [
        GroupScenario::C0,
        GroupScenario::C1,
        GroupScenario::I1,
        GroupScenario::C2,
        GroupScenario::I2,
        GroupScenario::C3,
        GroupScenario::IPhi,
        GroupScenario::IPsi,
    ];

    /// The user group (0..=3) this combination belongs to.
    pub fn user_group(self) -> usize {
        match self {
            GroupScenario::C0 => 0,
            GroupScenario::C1 | GroupScenario::I1 => 1,
            GroupScenario::C2 | GroupScenario::I2 => 2,
            GroupScenario::C3 | GroupScenario::IPhi | GroupScenario::IPsi => 3,
        }
    }

    pub fn is_treated(self) -> bool {
        matches!(
            self,
            GroupScenario::I1 | GroupScenario::I2 | GroupScenario::IPhi | GroupScenario::IPsi
        )
    }

    /// Stable position in [`GroupScenario::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            GroupScenario::C0 => "C0",
            GroupScenario::C1 => "C1",
            GroupScenario::I1 => "I1",
            GroupScenario::C2 => "C2",
            GroupScenario::I2 => "I2",
            GroupScenario::C3 => "C3",
            GroupScenario::IPhi => "Iphi",
            GroupScenario::IPsi => "Ipsi",
        }
    }
}

impl fmt::Display for GroupScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseMoments {
    pub mean: f64,
    pub var: f64,
}

impl ResponseMoments {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }
}

/// Expected user counts per group. Real-valued: the closed forms halve and
/// quarter these, and the simulator floors only when it draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSizes {
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl GroupSizes {
    pub fn new(g0: f64, g1: f64, g2: f64, g3: f64) -> Self {
        Self { g0, g1, g2, g3 }
    }

    pub fn get(&self, group: usize) -> f64 {
        match group {
            0 => self.g0,
            1 => self.g1,
            2 => self.g2,
            3 => self.g3,
            _ => panic!("user group {group} out of range"),
        }
    }

    pub fn qualified(&self) -> f64 {
        self.g1 + self.g2 + self.g3
    }

    pub fn total(&self) -> f64 {
        self.g0 + self.qualified()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.g0 * k, self.g1 * k, self.g2 * k, self.g3 * k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: GroupSizes,
    pub moments: BTreeMap<GroupScenario, ResponseMoments>,
}

/// A single broken rule in a [`PopulationSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl PopulationSpec {
    pub fn new(n: GroupSizes, moments: impl IntoIterator<Item = (GroupScenario, ResponseMoments)>) -> Self {
        Self {
            n,
            moments: moments.into_iter().collect(),
        }
    }

    /// Every combination shares the same moments.
    pub fn uniform(n: GroupSizes, mean: f64, var: f64) -> Self {
        Self::new(n, GroupScenario::ALL.map(|g| (g, ResponseMoments::new(mean, var))))
    }

    pub fn moment(&self, g: GroupScenario) -> Option<ResponseMoments> {
        self.moments.get(&g).copied()
    }

    pub fn set(&mut self, g: GroupScenario, mean: f64, var: f64) -> &mut Self {
        self.moments.insert(g, ResponseMoments::new(mean, var));
        self
    }

    pub fn with_sizes(&self, n: GroupSizes) -> Self {
        Self {
            n,
            moments: self.moments.clone(),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_population(self)
    }

    /// Fully populated moment table, or the list of violations.
    pub fn lattice(&self) -> Result<Lattice, ModelError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(ModelError::InvalidPopulation(violations));
        }
        let mut moments = [ResponseMoments::new(0.0, 1.0); 8];
        for g in GroupScenario::ALL {
            moments[g.index()] = self.moments[&g];
        }
        Ok(Lattice { n: self.n, moments })
    }

    /// Bitwise digest of every number in the population.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for g in 0..4 {
            h.write(self.n.get(g).to_bits());
        }
        for (g, m) in &self.moments {
            h.write(g.index() as u64);
            h.write(m.mean.to_bits());
            h.write(m.var.to_bits());
        }
        h.0
    }
}

/// A validated population: sizes plus all eight moment pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub n: GroupSizes,
    moments: [ResponseMoments; 8],
}

impl Lattice {
    pub fn get(&self, g: GroupScenario) -> ResponseMoments {
        self.moments[g.index()]
    }

    pub fn mean(&self, g: GroupScenario) -> f64 {
        self.moments[g.index()].mean
    }

    pub fn var(&self, g: GroupScenario) -> f64 {
        self.moments[g.index()].var
    }
}

pub fn validate_population(spec: &PopulationSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, name) in ["g0", "g1", "g2", "g3"].iter().enumerate() {
        let v = spec.n.get(i);
        if !v.is_finite() || v < 0.0 {
            out.push(Violation {
                field: format!("n.{name}"),
                rule: format!("must be a finite non-negative number, got {v}"),
            });
        }
    }
    if spec.n.qualified().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        out.push(Violation {
            field: "n".into(),
            rule: "g1 + g2 + g3 must be positive".into(),
        });
    }
    for g in GroupScenario::ALL {
        match spec.moments.get(&g) {
            None => out.push(Violation {
                field: format!("moments.{g}"),
                rule: "missing group-scenario combination".into(),
            }),
            Some(m) => {
                if !m.mean.is_finite() {
                    out.push(Violation {
                        field: format!("moments.{g}.mean"),
                        rule: format!("must be finite, got {}", m.mean),
                    });
                }
                if !(m.var.is_finite() && m.var > 0.0) {
                    out.push(Violation {
                        field: format!("moments.{g}.var"),
                        rule: format!("variance must be finite and strictly positive, got {}", m.var),
                    });
                }
            }
        }
    }
    out
}

/// Significance level and minimum power of the two-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub alpha: f64,
    #[serde(rename = "power")]
    pub pi_min: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            pi_min: 0.8,
        }
    }
}

impl TestConfig {
    pub fn new(alpha: f64, pi_min: f64) -> Result<Self, ModelError> {
        let cfg = Self { alpha, pi_min };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.alpha) {
            return Err(ModelError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !open(self.pi_min) {
            return Err(ModelError::InvalidConfig(format!(
                "power must lie in (0, 1), got {}",
                self.pi_min
            )));
        }
        if self.pi_min <= self.alpha {
            return Err(ModelError::InvalidConfig(format!(
                "power ({}) must exceed alpha ({})",
                self.pi_min, self.alpha
            )));
        }
        Ok(())
    }

    /// `z_{1-alpha/2}`, the two-sided critical value.
    pub fn z_critical(&self) -> f64 {
        upper_quantile(self.alpha / 2.0)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.write(self.alpha.to_bits());
        h.write(self.pi_min.to_bits());
        h.0
    }
}

/// Size and moments of one analysis group, formed as a size-weighted mixture
/// of group-scenario combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisGroupMixture {
    pub label: String,
    pub size: f64,
    pub mean: f64,
    pub var: f64,
}

impl AnalysisGroupMixture {
    /// Mixes `(weight, moments)` components. Weights are the user-group sizes;
    /// zero-weight components drop out. Returns `None` when all weights are zero.
    pub fn from_components(label: impl Into<String>, size: f64, components: &[(f64, ResponseMoments)]) -> Option<Self> {
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return None;
        }
        // Normalizing each weight first keeps the mixture bitwise invariant
        // when all sizes are scaled by an integer factor.
        let mut mean = 0.0;
        let mut var = 0.0;
        for (w, m) in components {
            let share = w / total;
            mean += share * m.mean;
            var += share * m.var;
        }
        Some(Self {
            label: label.into(),
            size,
            mean,
            var,
        })
    }

    /// Variance of this group's sample mean.
    pub fn mean_variance(&self) -> f64 {
        self.var / self.size
    }
}

// ---------------------------------------------------------------------------
// Standard normal

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in relative terms in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper-tail probability `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    normal_cdf(-x)
}

/// Quantile of the standard normal: the `z` with `Phi(z) = q`.
pub fn normal_quantile(q: f64) -> Result<f64, ModelError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(ModelError::Domain(q));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    // Work on the lower tail; 1 - q is exact for q in [0.5, 1).
    let (p, sign) = if q < 0.5 { (q, 1.0) } else { (1.0 - q, -1.0) };
    Ok(sign * lower_tail_quantile(p))
}

/// `z_{1-p}` for a small upper-tail probability `p`, e.g. `upper_quantile(0.025) = 1.96`.
pub(crate) fn upper_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p <= 0.5 {
        -lower_tail_quantile(p)
    } else {
        lower_tail_quantile(1.0 - p)
    }
}

// Acklam's rational approximation (relative error ~1.2e-9) followed by one
// Newton step on the CDF. Requires 0 < p <= 0.5.
fn lower_tail_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let pdf = normal_pdf(x);
    if pdf > 0.0 {
        x - (normal_cdf(x) - p) / pdf
    } else {
        x
    }
}

/// `z_{1-alpha/2} - z_{1-pi_min}`: the multiplier turning the standard error
/// of the effect estimate into the minimum detectable effect.
pub fn z_margin(cfg: &TestConfig) -> f64 {
    cfg.z_critical() - upper_quantile(cfg.pi_min)
}

// FNV-1a over 64-bit words, for spec fingerprints.
#[derive(Clone, Copy)]
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, word: u64) {
        for b in word.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}
