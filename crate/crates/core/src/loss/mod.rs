//! Loss families satisfying smoothness and dissipativity, with closed-form
//! constants, plus sampled-point certification of those constants.

mod certify;
mod families;

pub use certify::{certify, CertificationReport, InequalityCheck, Witness, CERTIFY_TOLERANCE};
pub use families::{CosineRidgeLoss, LogisticRidgeLoss, QuadraticLoss};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{ensure_nonnegative, ensure_positive, LabError, Result};

/// Assumption constants attached to a loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// `M`: gradient Lipschitz constant.
    pub smoothness: f64,
    /// `m` in `grad f(w,z) . w >= m ||w||^2 - b`.
    pub dissipativity: f64,
    /// `b` in the dissipativity condition.
    pub dissipativity_offset: f64,
    /// `A >= |f(0, z)|`.
    pub origin_bound: f64,
    /// `R`, when the family is strongly convex.
    pub strong_convexity: Option<f64>,
    /// Sub-Gaussian proxy of the evaluation loss, when one is known.
    pub sigma_g_sq: Option<f64>,
    pub data_radius: f64,
}

impl LossConstants {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("smoothness", self.smoothness)?;
        ensure_positive("dissipativity", self.dissipativity)?;
        ensure_nonnegative("dissipativity_offset", self.dissipativity_offset)?;
        ensure_nonnegative("origin_bound", self.origin_bound)?;
        ensure_positive("data_radius", self.data_radius)?;
        if let Some(r) = self.strong_convexity {
            ensure_positive("strong_convexity", r)?;
            if r > self.smoothness {
                return Err(LabError::invalid(
                    "strong_convexity",
                    format!("R = {r} exceeds M = {}", self.smoothness),
                ));
            }
        }
        if let Some(s) = self.sigma_g_sq {
            ensure_positive("sigma_g_sq", s)?;
        }
        Ok(())
    }

    /// `b / m`, the squared radius containing every local minimum.
    pub fn minima_radius_sq(&self) -> f64 {
        self.dissipativity_offset / self.dissipativity
    }

    /// `M sqrt(b/m)`, the bound on `||grad f(0, z)||`.
    pub fn origin_grad_bound(&self) -> f64 {
        self.smoothness * self.minima_radius_sq().sqrt()
    }

    /// Lower envelope `(m/3)||w||^2 - (b/2) log 3`.
    pub fn envelope_lower(&self, w_norm: f64) -> f64 {
        self.dissipativity / 3.0 * w_norm * w_norm - 0.5 * self.dissipativity_offset * 3f64.ln()
    }

    /// Upper envelope `(M/2)||w||^2 + M sqrt(b/m) ||w|| + A`.
    pub fn envelope_upper(&self, w_norm: f64) -> f64 {
        0.5 * self.smoothness * w_norm * w_norm
            + self.origin_grad_bound() * w_norm
            + self.origin_bound
    }
}

/// A loss `f(w, z)` with an analytic gradient and certified constants.
pub trait LossModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn eval(&self, w: &[f64], z: &Sample) -> f64;

    /// Writes `grad_w f(w, z)` into `out`.
    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]);

    fn constants(&self) -> &LossConstants;

    fn grad(&self, w: &[f64], z: &Sample) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(w, z, &mut g);
        g
    }
}

impl<L: LossModel + ?Sized> LossModel for Box<L> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, w: &[f64], z: &Sample) -> f64 {
        (**self).eval(w, z)
    }
    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]) {
        (**self).grad_into(w, z, out)
    }
    fn constants(&self) -> &LossConstants {
        (**self).constants()
    }
}

/// A loss whose claimed constants replace the family's derived ones.
///
/// Used to certify user-supplied claims; nothing here checks the claim.
#[derive(Debug, Clone)]
pub struct ClaimedConstants<L> {
    inner: L,
    claimed: LossConstants,
}

impl<L: LossModel> ClaimedConstants<L> {
    pub fn new(inner: L, claimed: LossConstants) -> Self {
        Self { inner, claimed }
    }
}

impl<L: LossModel> LossModel for ClaimedConstants<L> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, w: &[f64], z: &Sample) -> f64 {
        self.inner.eval(w, z)
    }
    fn grad_into(&self, w: &[f64], z: &Sample, out: &mut [f64]) {
        self.inner.grad_into(w, z, out)
    }
    fn constants(&self) -> &LossConstants {
        &self.claimed
    }
}

/// Central finite-difference gradient of `f(., z)` at `w`.
pub fn finite_difference_grad(model: &dyn LossModel, w: &[f64], z: &Sample) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            let h = 1e-6 * w[i].abs().max(1.0);
            probe[i] = w[i] + h;
            let up = model.eval(&probe, z);
            probe[i] = w[i] - h;
            let down = model.eval(&probe, z);
            probe[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error of the analytic gradient against central differences.
///
/// Gradients with norm below `1e-8` are compared in absolute terms.
pub fn gradient_relative_error(model: &dyn LossModel, w: &[f64], z: &Sample) -> f64 {
    let analytic = model.grad(w, z);
    let numeric = finite_difference_grad(model, w, z);
    let diff = crate::vecops::dist_sq(&analytic, &numeric).sqrt();
    diff / crate::vecops::norm(&analytic).max(1e-8)
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(LabError::DimensionMismatch { expected, got })
    }
}
