//! Data distributions and datasets.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, LabError, Result};
use crate::rng::{substream, LabRng, Role};
use crate::vecops::norm;

/// One data point `z`. Unlabeled families ignore `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn unlabeled(x: Vec<f64>) -> Self {
        Self { x, y: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(id: u64, samples: Vec<Sample>) -> Self {
        Self { id, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of the feature vectors.
    pub fn feature_mean(&self) -> Vec<f64> {
        let d = self.samples.first().map_or(0, |s| s.x.len());
        crate::vecops::mean_of(self.samples.iter().map(|s| &s.x), d)
    }
}

/// How labels are attached to features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labels {
    #[default]
    None,
    /// `y = sign(x_0)`, flipped with probability `flip_prob`.
    NoisySign { flip_prob: f64 },
}

/// A data-generating distribution `mu`.
pub trait DataDistribution: Send + Sync {
    fn sample(&self, rng: &mut LabRng) -> Sample;

    fn draw(&self, n: usize, rng: &mut LabRng) -> Vec<Sample> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Uniform distribution on the open ball of radius `radius` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBall {
    dim: usize,
    radius: f64,
    labels: Labels,
}

impl UniformBall {
    pub fn new(dim: usize, radius: f64, labels: Labels) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::invalid("dim", "must be at least 1"));
        }
        ensure_positive("radius", radius)?;
        if let Labels::NoisySign { flip_prob } = labels {
            if !(0.0..=1.0).contains(&flip_prob) {
                return Err(LabError::invalid("flip_prob", "must lie in [0, 1]"));
            }
        }
        Ok(Self { dim, radius, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl DataDistribution for UniformBall {
    fn sample(&self, rng: &mut LabRng) -> Sample {
        let mut x: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&x).max(f64::MIN_POSITIVE);
        // u in [0, 1) keeps the point strictly inside the ball
        let u: f64 = rng.random();
        let r = self.radius * u.powf(1.0 / self.dim as f64);
        x.iter_mut().for_each(|v| *v *= r / len);
        let y = match self.labels {
            Labels::None => 1.0,
            Labels::NoisySign { flip_prob } => {
                let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < flip_prob {
                    -sign
                } else {
                    sign
                }
            }
        };
        Sample { x, y }
    }
}

/// Dataset number `index` of size `n` drawn from its own stream.
pub fn draw_dataset(mu: &dyn DataDistribution, n: usize, seed: u64, index: u64) -> Dataset {
    let mut rng = substream(seed, index, Role::Data);
    Dataset::new(index, mu.draw(n, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_samples_stay_inside() {
        let mu = UniformBall::new(3, 2.0, Labels::None).unwrap();
        let ds = draw_dataset(&mu, 5000, 7, 0);
        assert!(ds.samples.iter().all(|s| norm(&s.x) < 2.0));
    }

    #[test]
    fn ball_second_moment_matches_uniform_law() {
        // E||x||^2 = d r^2 / (d + 2) for the uniform ball
        let mu = UniformBall::new(2, 1.0, Labels::None).unwrap();
        let ds = draw_dataset(&mu, 200_000, 11, 0);
        let m2: f64 = ds.samples.iter().map(|s| crate::vecops::norm_sq(&s.x)).sum::<f64>()
            / ds.len() as f64;
        assert!((m2 - 0.5).abs() < 5e-3, "{m2}");
    }

    #[test]
    fn labels_follow_sign_without_noise() {
        let mu = UniformBall::new(2, 1.0, Labels::NoisySign { flip_prob: 0.0 }).unwrap();
        let ds = draw_dataset(&mu, 100, 3, 1);
        for s in &ds.samples {
            assert_eq!(s.y, if s.x[0] >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(UniformBall::new(0, 1.0, Labels::None).is_err());
        assert!(UniformBall::new(2, -1.0, Labels::None).is_err());
        assert!(UniformBall::new(2, 1.0, Labels::NoisySign { flip_prob: 1.5 }).is_err());
    }
}
