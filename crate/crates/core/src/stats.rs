//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// A Monte Carlo mean together with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub estimator_name: String,
}

impl EstimateWithError {
    /// Sample mean and `s / sqrt(n)` with the unbiased (n - 1) variance.
    pub fn from_samples(name: impl Into<String>, samples: &[f64]) -> Self {
        let (mean, var) = mean_and_variance(samples);
        let n = samples.len();
        Self {
            mean,
            stderr: if n > 1 { (var / n as f64).sqrt() } else { 0.0 },
            n_samples: n,
            estimator_name: name.into(),
        }
    }

    pub fn exact(name: impl Into<String>, value: f64, n_samples: usize) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n_samples,
            estimator_name: name.into(),
        }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Mean and unbiased variance; variance is 0 for fewer than two samples.
pub fn mean_and_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}
