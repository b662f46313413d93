use super::{LossConstants, LossModel};
use crate::data::Sample;
use crate::error::{ensure_nonnegative, ensure_positive, LabError, Result};
use crate::vecops::{dist_sq, dot, norm_sq};

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 {
        Err(LabError::invalid("d", "dimension must be at least 1"))
    } else {
        Ok(())
    }
}

/// `f(w, z) = (R/2) ||w - z||^2`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    r: f64,
    d: usize,
    constants: LossConstants,
}

impl QuadraticLoss {
    pub fn new(r: f64, data_radius: f64, d: usize) -> Result<Self> {
        ensure_positive("R", r)?;
        ensure_positive("data_radius", data_radius)?;
        check_dimension(d)?;
        // grad.w = R||w||^2 - R z.w >= (R/2)||w||^2 - (R/2)||z||^2
        let half_r2 = 0.5 * r * data_radius * data_radius;
        let constants = LossConstants {
            smoothness: r,
            dissipativity: 0.5 * r,
            dissipativity_offset: half_r2,
            origin_bound: half_r2,
            strong_convexity: Some(r),
            sigma_g_sq: None,
            data_radius,
        };
        Ok(Self { r, d, constants })
    }

    pub fn strong_convexity(&self) -> f64 {
        self.r
    }

    pub fn with_sigma_g_sq(mut self, sigma_g_sq: f64) -> Self {
        self.constants.sigma_g_sq = Some(sigma_g_sq);
        self
    }
}

impl LossModel for QuadraticLoss {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, w: &[f64], z: &Sample) -> f64 {
        0.5 * self.r * dist_sq(w, &z.x)
    }

    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]) {
        for ((o, wi), zi) in out.iter_mut().zip(w).zip(&z.x) {
            *o = self.r * (wi - zi);
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// `f(w, (x, y)) = log(1 + exp(-y w.x)) + (lambda/2) ||w||^2`.
#[derive(Debug, Clone)]
pub struct LogisticRidgeLoss {
    lambda: f64,
    d: usize,
    constants: LossConstants,
}

impl LogisticRidgeLoss {
    pub fn new(lambda: f64, data_radius: f64, d: usize) -> Result<Self> {
        ensure_positive("lambda", lambda)?;
        ensure_positive("data_radius", data_radius)?;
        check_dimension(d)?;
        let r2 = data_radius * data_radius;
        // Hessian = s(1-s) x x^T + lambda I with s(1-s) <= 1/4
        // grad.w >= lambda||w||^2 - ||x|| ||w|| >= (lambda/2)||w||^2 - ||x||^2/(2 lambda)
        let constants = LossConstants {
            smoothness: 0.25 * r2 + lambda,
            dissipativity: 0.5 * lambda,
            dissipativity_offset: r2 / (2.0 * lambda),
            origin_bound: std::f64::consts::LN_2,
            strong_convexity: Some(lambda),
            sigma_g_sq: None,
            data_radius,
        };
        Ok(Self { lambda, d, constants })
    }

    pub fn with_sigma_g_sq(mut self, sigma_g_sq: f64) -> Self {
        self.constants.sigma_g_sq = Some(sigma_g_sq);
        self
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LossModel for LogisticRidgeLoss {
    fn name(&self) -> &str {
        "logistic_ridge"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, w: &[f64], z: &Sample) -> f64 {
        softplus(-z.y * dot(w, &z.x)) + 0.5 * self.lambda * norm_sq(w)
    }

    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]) {
        let margin = z.y * dot(w, &z.x);
        let coef = -z.y * sigmoid(-margin);
        for ((o, wi), xi) in out.iter_mut().zip(w).zip(&z.x) {
            *o = coef * xi + self.lambda * wi;
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// `f(w, z) = (lambda/2) ||w||^2 + a cos(w.z)`, non-convex for `a ||z||^2 > lambda`.
#[derive(Debug, Clone)]
pub struct CosineRidgeLoss {
    lambda: f64,
    amplitude: f64,
    d: usize,
    constants: LossConstants,
}

impl CosineRidgeLoss {
    pub fn new(lambda: f64, amplitude: f64, data_radius: f64, d: usize) -> Result<Self> {
        ensure_positive("lambda", lambda)?;
        ensure_nonnegative("a", amplitude)?;
        ensure_positive("data_radius", data_radius)?;
        check_dimension(d)?;
        let r2 = data_radius * data_radius;
        // Hessian = lambda I - a cos(w.z) z z^T
        // grad.w >= lambda||w||^2 - a||z|| ||w|| >= (lambda/2)||w||^2 - a^2||z||^2/(2 lambda)
        let constants = LossConstants {
            smoothness: lambda + amplitude * r2,
            dissipativity: 0.5 * lambda,
            dissipativity_offset: amplitude * amplitude * r2 / (2.0 * lambda),
            origin_bound: amplitude,
            strong_convexity: None,
            sigma_g_sq: None,
            data_radius,
        };
        Ok(Self {
            lambda,
            amplitude,
            d,
            constants,
        })
    }

    pub fn with_sigma_g_sq(mut self, sigma_g_sq: f64) -> Self {
        self.constants.sigma_g_sq = Some(sigma_g_sq);
        self
    }
}

impl LossModel for CosineRidgeLoss {
    fn name(&self) -> &str {
        "cosine_ridge"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, w: &[f64], z: &Sample) -> f64 {
        0.5 * self.lambda * norm_sq(w) + self.amplitude * dot(w, &z.x).cos()
    }

    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]) {
        let s = self.amplitude * dot(w, &z.x).sin();
        for ((o, wi), zi) in out.iter_mut().zip(w).zip(&z.x) {
            *o = self.lambda * wi - s * zi;
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}
