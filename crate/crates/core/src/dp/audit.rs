//! Histogram estimate of the privacy-loss distribution of a scalar mechanism.

use std::path::Path;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub samples: usize,
    /// Equal-width bins before merging.
    pub fine_bins: usize,
    /// Adjacent bins are merged until both counts reach this.
    pub min_count: usize,
    pub epsilon: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            fine_bins: 4096,
            min_count: 200,
            epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBin {
    pub lo: f64,
    pub hi: f64,
    pub count_d: u64,
    pub count_d_prime: u64,
    /// `ln(P_D(bin) / P_D'(bin))`; absent when either count is zero.
    pub privacy_loss: Option<f64>,
    pub undersampled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub samples: usize,
    pub bins: Vec<AuditBin>,
    /// Mass under `D` of well-sampled bins whose loss exceeds `epsilon`.
    pub exceedance: f64,
    /// Mass under `D` of bins too sparse to estimate a loss.
    pub undersampled_mass: f64,
    /// Binomial standard error of `exceedance`.
    pub standard_error: f64,
}

impl AuditReport {
    pub fn max_abs_loss(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| b.privacy_loss)
            .fold(0.0, |m, l| m.max(l.abs()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Runs `mechanism` `samples` times on each of `d` and `d_prime`. Both runs
/// replay the same random stream, so identical inputs give identical histograms.
pub fn empirical_privacy_audit<I, F>(mechanism: F, d: &I, d_prime: &I, config: &AuditConfig, seed: u64) -> Result<AuditReport>
where
    I: ?Sized,
    F: Fn(&I, &mut ChaCha20Rng) -> f64,
{
    if config.samples == 0 || config.fine_bins == 0 || config.min_count == 0 {
        return Err(Error::Argument("audit needs positive samples, bins and min_count".into()));
    }
    let seeds = SeedTree::new(seed);
    let draw = |input: &I| -> Result<Vec<f64>> {
        let mut rng = seeds.stream("audit", 0);
        let out: Vec<f64> = (0..config.samples).map(|_| mechanism(input, &mut rng)).collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("mechanism produced a non-finite output".into()));
        }
        Ok(out)
    };
    let a = draw(d)?;
    let b = draw(d_prime)?;

    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / config.fine_bins as f64 } else { 1.0 };
    let index = |x: f64| (((x - lo) / width) as usize).min(config.fine_bins - 1);
    let mut fine_a = vec![0u64; config.fine_bins];
    let mut fine_b = vec![0u64; config.fine_bins];
    for &x in &a {
        fine_a[index(x)] += 1;
    }
    for &x in &b {
        fine_b[index(x)] += 1;
    }
    let edge = |i: usize| if i == config.fine_bins { hi } else { lo + i as f64 * width };

    let min = config.min_count as u64;
    let mut merged: Vec<(usize, usize, u64, u64)> = Vec::new();
    let mut start = 0;
    let (mut ca, mut cb) = (0u64, 0u64);
    for i in 0..config.fine_bins {
        ca += fine_a[i];
        cb += fine_b[i];
        if ca >= min && cb >= min {
            merged.push((start, i + 1, ca, cb));
            start = i + 1;
            ca = 0;
            cb = 0;
        }
    }
    if ca + cb > 0 || merged.is_empty() {
        match merged.last_mut() {
            Some(last) => {
                last.1 = config.fine_bins;
                last.2 += ca;
                last.3 += cb;
            }
            None => merged.push((0, config.fine_bins, ca, cb)),
        }
    }

    let n = config.samples as f64;
    let mut exceedance = 0.0;
    let mut undersampled_mass = 0.0;
    let bins: Vec<AuditBin> = merged
        .into_iter()
        .map(|(s, e, ca, cb)| {
            let undersampled = ca < min || cb < min;
            let privacy_loss = (ca > 0 && cb > 0).then(|| (ca as f64 / cb as f64).ln());
            let mass = ca as f64 / n;
            if undersampled {
                undersampled_mass += mass;
            } else if privacy_loss.is_some_and(|l| l > config.epsilon) {
                exceedance += mass;
            }
            AuditBin {
                lo: edge(s),
                hi: edge(e),
                count_d: ca,
                count_d_prime: cb,
                privacy_loss,
                undersampled,
            }
        })
        .collect();
    let standard_error = (exceedance * (1.0 - exceedance) / n).sqrt();
    Ok(AuditReport {
        epsilon: config.epsilon,
        samples: config.samples,
        bins,
        exceedance,
        undersampled_mass,
        standard_error,
    })
}
