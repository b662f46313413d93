use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LossModel;
use crate::data::Sample;
use crate::error::{LabError, Result};
use crate::rng::{substream, LabRng, Role};
use crate::vecops::{dist_sq, dot, norm, norm_sq};

/// Slack allowed on every sampled inequality.
pub const CERTIFY_TOLERANCE: f64 = 1e-9;

const BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub w: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_bar: Option<Vec<f64>>,
    pub z: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub inequality_name: String,
    pub n_samples: usize,
    pub n_violations: usize,
    /// Smallest `rhs - lhs` seen; negative beyond the tolerance means violated.
    pub worst_margin: f64,
    /// Point attaining the worst margin, reported only on violation.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub model: String,
    pub tolerance: f64,
    pub sample_half_width: f64,
    pub checks: Vec<InequalityCheck>,
}

impl CertificationReport {
    pub fn certified(&self) -> bool {
        self.checks.iter().all(|c| c.n_violations == 0)
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.n_violations).sum()
    }

    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.inequality_name == name)
    }
}

const NAMES: [&str; 5] = [
    "smoothness",
    "dissipativity",
    "origin_gradient",
    "envelope_lower",
    "envelope_upper",
];

#[derive(Clone)]
struct Tally {
    violations: usize,
    worst: f64,
    witness: Option<Witness>,
}

impl Tally {
    fn new() -> Self {
        Self {
            violations: 0,
            worst: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        if margin < -CERTIFY_TOLERANCE || margin.is_nan() {
            self.violations += 1;
        }
        if margin < self.worst || margin.is_nan() {
            self.worst = margin;
            if margin < -CERTIFY_TOLERANCE || margin.is_nan() {
                self.witness = Some(witness());
            }
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.violations += other.violations;
        if other.worst < self.worst {
            self.worst = other.worst;
            self.witness = other.witness;
        }
        self
    }
}

fn sample_ball(rng: &mut LabRng, d: usize, radius: f64) -> Sample {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
        if norm(&x) < radius {
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            return Sample { x, y };
        }
    }
}

fn sample_cube(rng: &mut LabRng, d: usize, half_width: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-half_width..half_width)).collect()
}

fn certify_batch(model: &dyn LossModel, count: usize, half_width: f64, mut rng: LabRng) -> Vec<Tally> {
    let c = model.constants();
    let d = model.dim();
    let mut tallies = vec![Tally::new(); NAMES.len()];
    let mut g = vec![0.0; d];
    let mut g_bar = vec![0.0; d];
    let origin = vec![0.0; d];
    for _ in 0..count {
        let w = sample_cube(&mut rng, d, half_width);
        let w_bar = sample_cube(&mut rng, d, half_width);
        let z = sample_ball(&mut rng, d, c.data_radius);

        model.grad_into(&w, &z, &mut g);
        model.grad_into(&w_bar, &z, &mut g_bar);
        let lhs = dist_sq(&g, &g_bar).sqrt();
        let rhs = c.smoothness * dist_sq(&w, &w_bar).sqrt();
        tallies[0].record(rhs - lhs, || Witness {
            w: w.clone(),
            w_bar: Some(w_bar.clone()),
            z: z.clone(),
        });

        let margin = dot(&g, &w) - (c.dissipativity * norm_sq(&w) - c.dissipativity_offset);
        tallies[1].record(margin, || Witness {
            w: w.clone(),
            w_bar: None,
            z: z.clone(),
        });

        model.grad_into(&origin, &z, &mut g_bar);
        tallies[2].record(c.origin_grad_bound() - norm(&g_bar), || Witness {
            w: origin.clone(),
            w_bar: None,
            z: z.clone(),
        });

        let f = model.eval(&w, &z);
        let wn = norm(&w);
        tallies[3].record(f - c.envelope_lower(wn), || Witness {
            w: w.clone(),
            w_bar: None,
            z: z.clone(),
        });
        tallies[4].record(c.envelope_upper(wn) - f, || Witness {
            w: w.clone(),
            w_bar: None,
            z: z.clone(),
        });
    }
    tallies
}

/// Checks the claimed constants of `model` at `n_samples` random points.
///
/// Parameters are drawn from the cube of half-width `10 max(1, sqrt(b/m))`,
/// data points from the ball of radius `data_radius` (labels uniform on
/// `{-1, +1}`). Violations are reported, not raised.
pub fn certify(model: &dyn LossModel, n_samples: usize, seed: u64) -> Result<CertificationReport> {
    if n_samples == 0 {
        return Err(LabError::invalid("n_samples", "must be at least 1"));
    }
    let c = model.constants();
    c.validate()?;
    let half_width = 10.0 * c.minima_radius_sq().sqrt().max(1.0);
    let n_batches = n_samples.div_ceil(BATCH);
    let merged = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH.min(n_samples - b * BATCH);
            certify_batch(model, count, half_width, substream(seed, b as u64, Role::Certify))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(|acc, t| acc.into_iter().zip(t).map(|(a, b)| a.merge(b)).collect())
        .expect("at least one batch");
    let checks = NAMES
        .iter()
        .zip(merged)
        .map(|(name, t)| InequalityCheck {
            inequality_name: name.to_string(),
            n_samples,
            n_violations: t.violations,
            worst_margin: t.worst,
            witness: t.witness,
        })
        .collect();
    Ok(CertificationReport {
        model: model.name().to_string(),
        tolerance: CERTIFY_TOLERANCE,
        sample_half_width: half_width,
        checks,
    })
}
