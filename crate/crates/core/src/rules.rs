//! Superiority verdicts between setups and the closed-form rules of thumb for
//! metric dilution (Setup 3 vs Setup 2) and dual control (Setup 4 vs Setup 3).
//!
//! Setup `S` beats `R` under criterion 1 when it has both a larger actual
//! effect and a smaller MDE, and under criterion 2 when its gain in actual
//! effect exceeds its loss in sensitivity: `delta_S - delta_R > theta_S - theta_R`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{effect_summary, EffectSummary, EngineError, SetupKind};
use crate::model::{z_margin, GroupScenario, GroupSizes, ModelError, PopulationSpec, TestConfig};

/// Relative tolerance below which effect and MDE gaps count as ties.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RulesError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("summaries were computed on different populations or test configurations")]
    Mismatch,
    #[error("rule not applicable: {0}")]
    Inapplicable(String),
}

impl From<ModelError> for RulesError {
    fn from(e: ModelError) -> Self {
        RulesError::Engine(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    /// Larger actual effect and smaller MDE.
    #[serde(rename = "1")]
    First,
    /// Gain in actual effect exceeds loss in sensitivity.
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "none")]
    None,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::First => "1",
            Criterion::Second => "2",
            Criterion::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    /// `None` when inconclusive.
    pub winner: Option<SetupKind>,
    pub criterion: Criterion,
    /// `delta_winner - delta_loser`; first minus second when inconclusive.
    pub delta_gap: f64,
    /// `theta_winner - theta_loser`; first minus second when inconclusive.
    pub theta_gap: f64,
    /// Both effects were non-positive and were negated before comparing.
    pub sign_normalized: bool,
    /// Effects have opposite signs; reported, never resolved.
    pub opposite_signs: bool,
}

impl ComparisonVerdict {
    pub fn is_inconclusive(&self) -> bool {
        self.winner.is_none()
    }
}

/// Decides whether `s` is superior to `r` (or vice versa).
pub fn compare(s: &EffectSummary, r: &EffectSummary) -> Result<ComparisonVerdict, RulesError> {
    if s.population_fingerprint != r.population_fingerprint || s.config_fingerprint != r.config_fingerprint {
        return Err(RulesError::Mismatch);
    }
    let (mut ds, mut dr) = (s.delta, r.delta);
    let (ts, tr) = (s.theta_star, r.theta_star);

    if ds * dr < 0.0 {
        return Ok(ComparisonVerdict {
            winner: None,
            criterion: Criterion::None,
            delta_gap: ds - dr,
            theta_gap: ts - tr,
            sign_normalized: false,
            opposite_signs: true,
        });
    }
    let sign_normalized = ds <= 0.0 && dr <= 0.0 && (ds < 0.0 || dr < 0.0);
    if sign_normalized {
        ds = -ds;
        dr = -dr;
    }

    let gd = ds - dr;
    let gt = ts - tr;
    let eps_d = TIE_EPSILON * ds.abs().max(dr.abs());
    let eps_t = TIE_EPSILON * ts.max(tr);
    let eps = eps_d.max(eps_t);

    let verdict = |winner: SetupKind, criterion: Criterion, flip: bool| ComparisonVerdict {
        winner: Some(winner),
        criterion,
        delta_gap: if flip { -gd } else { gd },
        theta_gap: if flip { -gt } else { gt },
        sign_normalized,
        opposite_signs: false,
    };

    Ok(if gd > eps_d && gt < -eps_t {
        verdict(s.setup, Criterion::First, false)
    } else if gd < -eps_d && gt > eps_t {
        verdict(r.setup, Criterion::First, true)
    } else if gd - gt > eps {
        verdict(s.setup, Criterion::Second, false)
    } else if gd - gt < -eps {
        verdict(r.setup, Criterion::Second, true)
    } else {
        ComparisonVerdict {
            winner: None,
            criterion: Criterion::None,
            delta_gap: gd,
            theta_gap: gt,
            sign_normalized,
            opposite_signs: false,
        }
    })
}

// ---------------------------------------------------------------------------
// Dilution: Setup 3 (qualified only) vs Setup 2 (all samples)

/// Shorthands shared by the dilution rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilutionTerms {
    /// Size-weighted sum of per-group treatment contrasts.
    pub eta: f64,
    /// Size-weighted sum of per-group variance pairs.
    pub xi: f64,
    /// `z_{1-alpha/2} - z_{1-pi_min}`.
    pub z: f64,
}

impl DilutionTerms {
    pub fn new(spec: &PopulationSpec, cfg: &TestConfig) -> Result<Self, RulesError> {
        use GroupScenario::*;
        cfg.validate()?;
        let l = spec.lattice()?;
        let n = l.n;
        let eta =
            n.g1 * (l.mean(C1) - l.mean(I1)) + n.g2 * (l.mean(I2) - l.mean(C2)) + n.g3 * (l.mean(IPsi) - l.mean(IPhi));
        Ok(Self {
            eta,
            xi: xi(spec)?,
            z: z_margin(cfg),
        })
    }

    /// Setup 3 actual effect, `eta / (n1 + n2 + n3)`.
    pub fn delta_qualified(&self, n: &GroupSizes) -> f64 {
        self.eta / n.qualified()
    }

    /// Setup 3 MDE, `sqrt(2) z sqrt(xi) / (n1 + n2 + n3)`.
    pub fn theta_qualified(&self, n: &GroupSizes) -> f64 {
        std::f64::consts::SQRT_2 * self.z * self.xi.sqrt() / n.qualified()
    }
}

fn xi(spec: &PopulationSpec) -> Result<f64, RulesError> {
    use GroupScenario::*;
    let l = spec.lattice()?;
    let n = l.n;
    Ok(n.g1 * (l.var(C1) + l.var(I1)) + n.g2 * (l.var(I2) + l.var(C2)) + n.g3 * (l.var(IPsi) + l.var(IPhi)))
}

fn require_group_zero(spec: &PopulationSpec) -> Result<(), RulesError> {
    if spec.n.g0 > 0.0 {
        Ok(())
    } else {
        Err(RulesError::Inapplicable(
            "n0 = 0: with no unqualified users the diluted and undiluted setups coincide".into(),
        ))
    }
}

/// Whether the undiluted setup has the smaller MDE, i.e. the unqualified
/// users' variance is large enough that excluding them helps.
pub fn dilution_theta_check(spec: &PopulationSpec) -> Result<bool, RulesError> {
    let l = spec.lattice()?;
    require_group_zero(spec)?;
    let n = l.n;
    let q = n.qualified();
    let lhs = xi(spec)? * (n.g0 + 2.0 * q) / (2.0 * q * q);
    Ok(lhs < l.var(GroupScenario::C0))
}

/// The equal-variance shortcut of [`dilution_theta_check`]: every qualified
/// combination shares variance `sigma_sq_s`.
pub fn dilution_equal_variance_check(sigma_sq_s: f64, sigma_sq_c0: f64, n: &GroupSizes) -> bool {
    sigma_sq_s * (n.g0 / n.qualified() + 2.0) < sigma_sq_c0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilutionRule {
    /// Undiluted setup has the smaller MDE (criterion 1).
    SmallerMde,
    /// The master inequality's right side is non-positive.
    TrivialCase,
    /// Undiluted setup is already adequately powered: `theta <= delta`.
    AdequatelyPowered,
    /// Squared-space comparison of group 0's standard error against the
    /// existing noise gap.
    GeneralTest,
}

impl DilutionRule {
    pub fn name(self) -> &'static str {
        match self {
            DilutionRule::SmallerMde => "smaller-mde",
            DilutionRule::TrivialCase => "trivial-case",
            DilutionRule::AdequatelyPowered => "adequately-powered",
            DilutionRule::GeneralTest => "general-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionVerdict {
    pub terms: DilutionTerms,
    /// Rule that settled the verdict.
    pub rule: DilutionRule,
    /// `true` when Setup 3 (no dilution) is superior to Setup 2.
    pub undiluted_superior: bool,
    /// The contrasts were negative and analysis groups were swapped.
    pub sign_normalized: bool,
    pub delta_qualified: f64,
    pub theta_qualified: f64,
    /// Sides of the general test, when it was reached.
    pub general_test: Option<(f64, f64)>,
}

/// Sides of the master criterion-2 inequality for dilution. Setup 3 wins
/// criterion 2 iff `lhs > rhs`. Uses `|eta|`.
pub fn dilution_master_sides(spec: &PopulationSpec, cfg: &TestConfig) -> Result<(f64, f64), RulesError> {
    require_group_zero(spec)?;
    let t = DilutionTerms::new(spec, cfg)?;
    let n = spec.n;
    let l = spec.lattice()?;
    let q = n.qualified();
    let lhs = q / n.g0 * (2.0 * n.g0 * l.var(GroupScenario::C0) + t.xi).sqrt();
    let rhs = n.total() / n.g0 * t.xi.sqrt() - t.eta.abs() / (std::f64::consts::SQRT_2 * t.z);
    Ok((lhs, rhs))
}

/// Sides of the squared-space general test: Setup 3 wins iff `lhs > rhs`.
/// Equivalent to the master inequality whenever its right side is positive.
pub fn dilution_general_sides(spec: &PopulationSpec, cfg: &TestConfig) -> Result<(f64, f64), RulesError> {
    require_group_zero(spec)?;
    let t = DilutionTerms::new(spec, cfg)?;
    let n = spec.n;
    let l = spec.lattice()?;
    let delta = t.eta.abs() / n.qualified();
    let theta = t.theta_qualified(&n);
    let ratio = n.qualified() / n.g0;
    let lhs = 2.0 * l.var(GroupScenario::C0) / n.g0;
    let a = theta - delta + ratio * theta;
    let b = ratio * theta;
    let rhs = (a - b) * (a + b) / (2.0 * t.z * t.z);
    Ok((lhs, rhs))
}

/// Runs the dilution rules in order, cheapest sufficient condition first.
pub fn dilution_verdict(spec: &PopulationSpec, cfg: &TestConfig) -> Result<DilutionVerdict, RulesError> {
    require_group_zero(spec)?;
    let terms = DilutionTerms::new(spec, cfg)?;
    if terms.eta == 0.0 {
        return Err(RulesError::Inapplicable(
            "eta = 0: no treatment contrast in either orientation".into(),
        ));
    }
    let n = spec.n;
    let sign_normalized = terms.eta < 0.0;
    let delta = terms.eta.abs() / n.qualified();
    let theta = terms.theta_qualified(&n);

    let done = |rule, undiluted_superior, general_test| DilutionVerdict {
        terms,
        rule,
        undiluted_superior,
        sign_normalized,
        delta_qualified: delta,
        theta_qualified: theta,
        general_test,
    };

    if dilution_theta_check(spec)? {
        return Ok(done(DilutionRule::SmallerMde, true, None));
    }
    if n.total() / n.g0 * theta <= delta {
        return Ok(done(DilutionRule::TrivialCase, true, None));
    }
    if theta <= delta {
        return Ok(done(DilutionRule::AdequatelyPowered, true, None));
    }
    let (lhs, rhs) = dilution_general_sides(spec, cfg)?;
    Ok(done(DilutionRule::GeneralTest, lhs > rhs, Some((lhs, rhs))))
}

// ---------------------------------------------------------------------------
// Dual control: Setup 4 vs Setup 3

/// Left and right sides of the full dual-control criterion. Setup 4 beats
/// Setup 3 under criterion 2 iff `lhs > rhs`. No sign normalization: the left
/// side carries the sign of `delta_S4 - delta_S3`.
pub fn dual_control_lhs_rhs(spec: &PopulationSpec, cfg: &TestConfig) -> Result<(f64, f64), RulesError> {
    use GroupScenario::*;
    cfg.validate()?;
    let l = spec.lattice()?;
    SetupKind::DualControl.check_applicable(spec)?;
    let n = l.n;
    let (n1, n2, n3) = (n.g1, n.g2, n.g3);
    let z = z_margin(cfg);

    let lift_b = n2 * (l.mean(I2) - l.mean(C2)) + n3 * (l.mean(IPsi) - l.mean(C3));
    let lift_a = n1 * (l.mean(I1) - l.mean(C1)) + n3 * (l.mean(IPhi) - l.mean(C3));
    let xi = xi(spec)?;
    let lhs = (n1 * lift_b / (n2 + n3) - n2 * lift_a / (n1 + n3)) / xi.sqrt();

    let var_a = n1 * (l.var(C1) + l.var(I1)) + n3 * (l.var(C3) + l.var(IPhi));
    let var_b = n2 * (l.var(C2) + l.var(I2)) + n3 * (l.var(C3) + l.var(IPsi));
    let grow_a = 1.0 + n2 / (n1 + n3);
    let grow_b = 1.0 + n1 / (n2 + n3);
    let inner = 2.0 * (grow_a * grow_a * var_a + grow_b * grow_b * var_b) / xi;
    let rhs = std::f64::consts::SQRT_2 * z * (inner.sqrt() - 1.0);
    Ok((lhs, rhs))
}

/// Right side of the dual-control criterion when every variance is equal;
/// depends only on the size ratios.
pub fn dual_control_rhs_equal_variance(n: &GroupSizes, cfg: &TestConfig) -> f64 {
    let q = n.qualified();
    let inner = 2.0 * (q / (n.g1 + n.g3) + q / (n.g2 + n.g3));
    std::f64::consts::SQRT_2 * z_margin(cfg) * (inner.sqrt() - 1.0)
}

/// Left side of the dual-control criterion when `n1 = n2 = n3 = n`.
pub fn dual_control_lhs_equal_sizes(spec: &PopulationSpec) -> Result<f64, RulesError> {
    use GroupScenario::*;
    let l = spec.lattice()?;
    let n = l.n.g1;
    let diff = (l.mean(I2) - l.mean(C2)) - (l.mean(I1) - l.mean(C1)) + l.mean(IPsi) - l.mean(IPhi);
    let six: f64 = [C1, I1, C2, I2, IPhi, IPsi].iter().map(|&g| l.var(g)).sum();
    Ok(n.sqrt() * diff / (2.0 * six.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualControlVerdict {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs > rhs`: Setup 4 wins criterion 2 on the raw orientation.
    pub dual_control_superior: bool,
    pub comparison: ComparisonVerdict,
}

pub fn dual_control_verdict(spec: &PopulationSpec, cfg: &TestConfig) -> Result<DualControlVerdict, RulesError> {
    let (lhs, rhs) = dual_control_lhs_rhs(spec, cfg)?;
    let s4 = effect_summary(SetupKind::DualControl, spec, cfg)?;
    let s3 = effect_summary(SetupKind::QualifiedOnly, spec, cfg)?;
    Ok(DualControlVerdict {
        lhs,
        rhs,
        dual_control_superior: lhs > rhs,
        comparison: compare(&s4, &s3)?,
    })
}

/// Equal-size, equal-variance simplification of the dual-control criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedAssumptions {
    /// Shared response variance.
    pub sigma_sq_s: f64,
    /// Shared user-group size.
    pub n_common: f64,
    /// `(mu_I2 - mu_C2) - (mu_I1 - mu_C1) + mu_Ipsi - mu_Iphi`.
    pub delta_diff: f64,
}

impl SimplifiedAssumptions {
    pub fn validate(&self) -> Result<(), RulesError> {
        if !(self.sigma_sq_s.is_finite() && self.sigma_sq_s > 0.0) {
            return Err(RulesError::Inapplicable(format!(
                "sigma^2 must be positive, got {}",
                self.sigma_sq_s
            )));
        }
        if !(self.n_common.is_finite() && self.n_common > 0.0) {
            return Err(RulesError::Inapplicable(format!(
                "n must be positive, got {}",
                self.n_common
            )));
        }
        if !self.delta_diff.is_finite() {
            return Err(RulesError::Inapplicable(format!(
                "delta must be finite, got {}",
                self.delta_diff
            )));
        }
        Ok(())
    }

    /// Both sides of the dual-control criterion under the simplification.
    pub fn sides(&self, cfg: &TestConfig) -> (f64, f64) {
        let lhs = self.n_common.sqrt() * self.delta_diff / (2.0 * (6.0 * self.sigma_sq_s).sqrt());
        let rhs = std::f64::consts::SQRT_2 * z_margin(cfg) * (6f64.sqrt() - 1.0);
        (lhs, rhs)
    }
}

/// Per-group user count above which dual control beats the qualified-only setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum RequiredN {
    Finite(f64),
    Infinite,
}

impl RequiredN {
    pub fn value(&self) -> f64 {
        match self {
            RequiredN::Finite(v) => *v,
            RequiredN::Infinite => f64::INFINITY,
        }
    }
}

/// `(2 sqrt(12) (sqrt(6) - 1) z)^2`.
pub fn required_n_coefficient(cfg: &TestConfig) -> f64 {
    let c = 2.0 * 12f64.sqrt() * (6f64.sqrt() - 1.0) * z_margin(cfg);
    c * c
}

pub fn required_n(assump: &SimplifiedAssumptions, cfg: &TestConfig) -> Result<RequiredN, RulesError> {
    cfg.validate()?;
    if !(assump.sigma_sq_s.is_finite() && assump.sigma_sq_s > 0.0) {
        return Err(RulesError::Inapplicable(format!(
            "sigma^2 must be positive, got {}",
            assump.sigma_sq_s
        )));
    }
    if assump.delta_diff == 0.0 {
        return Ok(RequiredN::Infinite);
    }
    let d = assump.delta_diff;
    Ok(RequiredN::Finite(
        required_n_coefficient(cfg) * assump.sigma_sq_s / (d * d),
    ))
}
