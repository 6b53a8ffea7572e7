//! Helpers shared by the integration tests: a random population generator and
//! independent closed-form oracles that never go through the engine's layout
//! tables.

#![allow(dead_code)]

use rand::Rng;
use xdesign::model::{GroupScenario, GroupSizes, PopulationSpec};
use xdesign::SetupKind;
use GroupScenario::*;

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random population on which the qualified-only and dual-control setups
/// apply. Sizes span six orders of magnitude and are sometimes zero.
pub fn random_spec<R: Rng>(rng: &mut R) -> PopulationSpec {
    loop {
        let mut size = || {
            if rng.random_bool(0.1) {
                0.0
            } else {
                log_uniform(rng, 1.0, 1e6).round()
            }
        };
        let n = GroupSizes::new(size(), size(), size(), size());
        if n.g1 + n.g3 <= 0.0 || n.g2 + n.g3 <= 0.0 {
            continue;
        }
        let mut spec = PopulationSpec::uniform(n, 0.0, 1.0);
        for g in GroupScenario::ALL {
            let mean = rng.random_range(-5.0..5.0);
            let var = log_uniform(rng, 0.01, 100.0);
            spec.set(g, mean, var);
        }
        return spec;
    }
}

/// Per-combination mean and variance.
pub fn mv(spec: &PopulationSpec, g: GroupScenario) -> (f64, f64) {
    let m = spec.moment(g).unwrap();
    (m.mean, m.var)
}

/// Actual effect and variance of the effect estimate, written out per setup.
pub fn oracle_delta_and_variance(setup: SetupKind, spec: &PopulationSpec) -> (f64, f64) {
    let n = spec.n;
    let (n0, n1, n2, n3) = (n.g0, n.g1, n.g2, n.g3);
    let m = |g| mv(spec, g).0;
    let v = |g| mv(spec, g).1;
    let q = n1 + n2 + n3;
    let eta = n1 * (m(C1) - m(I1)) + n2 * (m(I2) - m(C2)) + n3 * (m(IPsi) - m(IPhi));
    let xi = n1 * (v(C1) + v(I1)) + n2 * (v(C2) + v(I2)) + n3 * (v(IPhi) + v(IPsi));
    match setup {
        SetupKind::IntersectionOnly => (m(IPsi) - m(IPhi), 2.0 * (v(IPhi) + v(IPsi)) / n3),
        SetupKind::AllSamples => {
            let t = n0 + q;
            (eta / t, 2.0 * (2.0 * n0 * v(C0) + xi) / (t * t))
        }
        SetupKind::QualifiedOnly => (eta / q, 2.0 * xi / (q * q)),
        SetupKind::DualControl => {
            let (sa, sb) = (n1 + n3, n2 + n3);
            let lift_a = (n1 * (m(I1) - m(C1)) + n3 * (m(IPhi) - m(C3))) / sa;
            let lift_b = (n2 * (m(I2) - m(C2)) + n3 * (m(IPsi) - m(C3))) / sb;
            let p = n1 * (v(C1) + v(I1)) + n3 * (v(C3) + v(IPhi));
            let qq = n2 * (v(C2) + v(I2)) + n3 * (v(C3) + v(IPsi));
            (lift_b - lift_a, 4.0 * p / (sa * sa) + 4.0 * qq / (sb * sb))
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
