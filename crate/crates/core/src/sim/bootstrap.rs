//! Percentile bootstrap interval of a sample mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use super::SimError;

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Resampled means, ascending.
    pub means: Vec<f64>,
}

impl BootstrapInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Fraction of bootstrap means below `x`, counting ties as half.
    pub fn rank(&self, x: f64) -> f64 {
        let below = self.means.partition_point(|&m| m < x);
        let not_above = self.means.partition_point(|&m| m <= x);
        (below as f64 + 0.5 * (not_above - below) as f64) / self.means.len() as f64
    }
}

/// 95% percentile interval from `n_bootstrap` resamples. Replicate `b` draws
/// from its own stream, so the result does not depend on evaluation order.
pub fn bootstrap_interval(samples: &[f64], n_bootstrap: usize, seed: u64) -> Result<BootstrapInterval, SimError> {
    if samples.len() < 2 {
        return Err(SimError::TooFewSamples(samples.len()));
    }
    if n_bootstrap == 0 {
        return Err(SimError::InvalidConfig("n_bootstrap must be at least 1".into()));
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..n_bootstrap as u64)
        .map(|b| {
            let mut rng = stream(seed, Purpose::Bootstrap, &[b]);
            (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        mean: samples.iter().sum::<f64>() / n as f64,
        lo: quantile_sorted(&means, 0.025),
        hi: quantile_sorted(&means, 0.975),
        means,
    })
}
