//! Explicit constant chains and the generalization / excess-risk bounds
//! built from them.

mod formulas;
mod report;

pub use formulas::{
    bound_farghly_shape, bound_pensia, bound_strongly_convex, bound_subexp_gen,
    bound_time_independent, bound_xu_raginsky, excess_risk_bound, psi_star_inverse, ExcessRisk,
    PensiaBound, PsiBranch, SubExpGen, TimeIndependentBound,
};
pub use report::{build_report, BoundEntry, BoundReport, ReportInputs};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_nonnegative, ensure_positive, LabError, Result};
use crate::loss::LossConstants;
use crate::sgld::SgldConfig;

pub const FLAG_HEURISTIC: &str = "heuristic-constant";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsiMode {
    /// `strongly_convex` when the family has `R`, otherwise `general_dissipative`.
    #[default]
    Auto,
    GeneralDissipative,
    StronglyConvex,
}

impl LsiMode {
    pub fn resolve(self, lc: &LossConstants) -> LsiMode {
        match self {
            LsiMode::Auto if lc.strong_convexity.is_some() => LsiMode::StronglyConvex,
            LsiMode::Auto => LsiMode::GeneralDissipative,
            other => other,
        }
    }
}

/// `1 v 1/m`.
fn one_or_inv_m(m: f64) -> f64 {
    1f64.max(1.0 / m)
}

/// LSI constant of the Gibbs measure `pi ~ exp(-beta F)`.
///
/// General mode evaluates `lambda_l = 2 D1 + 2 rho0^{-1} (D2 + 2)` with
/// `B = M sqrt(b/m)` and the unknown universal constant `universal_c`.
/// Strongly convex mode returns the Bakry-Emery value `1 / (2 beta R)`.
pub fn lsi_constant(lc: &LossConstants, beta: f64, d: usize, mode: LsiMode, universal_c: f64) -> Result<f64> {
    ensure_positive("beta", beta)?;
    ensure_positive("universal_c", universal_c)?;
    match mode.resolve(lc) {
        LsiMode::StronglyConvex => {
            let r = lc.strong_convexity.ok_or_else(|| {
                LabError::Precondition("strongly convex LSI needs a strong convexity constant R".into())
            })?;
            Ok(1.0 / (2.0 * beta * r))
        }
        _ => {
            let (big_m, m, b, a) = (lc.smoothness, lc.dissipativity, lc.dissipativity_offset, lc.origin_bound);
            if beta < 2.0 / m {
                return Err(LabError::Precondition(format!(
                    "general LSI constant needs beta >= 2/m = {}, got {beta}",
                    2.0 / m
                )));
            }
            let d = d as f64;
            let big_b = lc.origin_grad_bound();
            let d1 = (2.0 * m * m + 8.0 * big_m * big_m) / (beta * m * m * big_m);
            let d2 = 6.0 * big_m * (d + beta) / m;
            let exponent = 2.0 / m * (big_m + big_b) * (b * beta + d) + beta * (a + big_b);
            let rho_inv = 2.0 * universal_c * (d + b * beta) / (m * beta) * exponent.exp()
                + 1.0 / (m * beta * (d + b * beta));
            let value = 2.0 * d1 + 2.0 * rho_inv * (d2 + 2.0);
            if !value.is_finite() {
                return Err(LabError::Precondition(format!(
                    "general LSI constant overflows (exponent {exponent:.1})"
                )));
            }
            Ok(value)
        }
    }
}

fn check_step_size(lc: &LossConstants, eta: f64) -> Result<()> {
    let limit = 1f64.min(lc.dissipativity / (5.0 * lc.smoothness * lc.smoothness));
    if !(eta > 0.0 && eta < limit) {
        return Err(LabError::Precondition(format!(
            "eta must lie in (0, min(1, m/(5M^2))) = (0, {limit}), got {eta}"
        )));
    }
    Ok(())
}

/// Uniform-in-time second-moment bound `C0` on `E ||W_t||^2`.
pub fn moment_bound_c0(lc: &LossConstants, eta: f64, beta: f64, d: usize, s_sq: f64) -> Result<f64> {
    check_step_size(lc, eta)?;
    ensure_positive("beta", beta)?;
    ensure_nonnegative("init_var", s_sq)?;
    Ok(s_sq + moment_tail(lc, eta, beta, d))
}

/// `2 (1 v 1/m) (b + 10 eta M^2 b/m + d/beta)`.
fn moment_tail(lc: &LossConstants, eta: f64, beta: f64, d: usize) -> f64 {
    let (big_m, m, b) = (lc.smoothness, lc.dissipativity, lc.dissipativity_offset);
    2.0 * one_or_inv_m(m) * (b + 10.0 * eta * big_m * big_m * b / m + d as f64 / beta)
}

/// `delta = (n - k) / (k (n - 1))`, the without-replacement variance factor.
pub fn minibatch_delta(n: usize, k: usize) -> Result<f64> {
    if n < 2 {
        return Err(LabError::invalid("n", "need at least two data points"));
    }
    if k == 0 || k > n {
        return Err(LabError::invalid("batch_size", format!("need 1 <= k <= n, got {k}")));
    }
    Ok((n - k) as f64 / (k as f64 * (n - 1) as f64))
}

/// `8 delta M^2 (||w||^2 + k/m)`, bounding `E ||grad F_S(w) - grad F(w, B)||^2`.
pub fn sg_variance_bound(lc: &LossConstants, n: usize, k: usize, w_norm_sq: f64) -> Result<f64> {
    let delta = minibatch_delta(n, k)?;
    ensure_nonnegative("w_norm_sq", w_norm_sq)?;
    let big_m = lc.smoothness;
    Ok(8.0 * delta * big_m * big_m * (w_norm_sq + k as f64 / lc.dissipativity))
}

/// Constants entering the KL recursion that no closed form pins down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParametrixConstants {
    pub c1_prime: f64,
    pub c2_prime: f64,
    pub c0_tilde: f64,
    pub c1_tilde: f64,
}

impl Default for ParametrixConstants {
    fn default() -> Self {
        Self {
            c1_prime: 1.0,
            c2_prime: 1.0,
            c0_tilde: 1.0,
            c1_tilde: 0.0,
        }
    }
}

/// Bound-side settings beyond the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundOptions {
    pub parametrix: ParametrixConstants,
    /// Universal constant of the p-th moment lemma.
    pub moment_universal_c: f64,
    /// Measured stability statistic replacing the analytic `D1`.
    pub empirical_d1: Option<f64>,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            parametrix: ParametrixConstants::default(),
            moment_universal_c: 1.0,
            empirical_d1: None,
        }
    }
}

/// Every constant of the chain, evaluated for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub lsi_mode: LsiMode,
    pub c_ls: f64,
    pub c0: f64,
    pub grad_sq_bound: f64,
    pub delta: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub sigma_e_sq: f64,
    pub nu: f64,
    pub c5: f64,
    pub parametrix: ParametrixConstants,
    pub empirical_d1: bool,
    /// Names of unknown constants that were filled with defaults.
    pub heuristic: Vec<String>,
}

impl DerivedConstants {
    pub fn compute(lc: &LossConstants, cfg: &SgldConfig, opts: &BoundOptions) -> Result<Self> {
        lc.validate()?;
        let (eta, beta, d, s_sq) = (cfg.eta, cfg.beta, cfg.dim, cfg.init_var);
        let (big_m, m, b, a) = (lc.smoothness, lc.dissipativity, lc.dissipativity_offset, lc.origin_bound);
        let lsi_mode = cfg.lsi.mode.resolve(lc);
        let c_ls = lsi_constant(lc, beta, d, lsi_mode, cfg.lsi.universal_c)?;
        let c0 = moment_bound_c0(lc, eta, beta, d, s_sq)?;
        let delta = minibatch_delta(cfg.n, cfg.batch_size)?;
        let grad_sq_bound = big_m * big_m * c0 + big_m * big_m * b / m;

        // The per-step constants bound the first interval [0, eta] with eta <= 1.
        let tail = moment_tail(lc, 1.0, beta, d);
        let p = opts.parametrix;
        let d4 = big_m * big_m * (s_sq + tail) + big_m * big_m * b / m;
        let d5 = 2.0 * big_m * big_m * p.c0_tilde * (p.c1_tilde * eta * eta + s_sq + tail)
            + 2.0 * big_m * big_m * b / m;
        let d1 = match opts.empirical_d1 {
            Some(v) => {
                ensure_nonnegative("empirical_d1", v)?;
                v
            }
            None => 2.0 * (d4 + d5),
        };
        let df = d as f64;
        // the t-dependent parametrix term is largest at t = 0
        let d2 = beta * beta * big_m * big_m * (s_sq + tail + b / m)
            + df * p.c1_prime / (2.0 * std::f64::consts::PI * s_sq).sqrt()
            + df * p.c2_prime;
        let b1 = 0.5 * df * (2.0 * std::f64::consts::PI * s_sq).ln() + (s_sq + 2.0 * tail) / (2.0 * s_sq);
        let b2 = beta * big_m * (s_sq + tail) + beta * b / (2.0 * m) + a;
        let d3 = b1 + b2;
        if d3 <= 0.0 {
            return Err(LabError::Precondition(format!(
                "D3 = {d3} is not positive; increase the initial variance"
            )));
        }

        let sub = subexp_params(lc, beta, d, s_sq, opts.moment_universal_c)?;

        let mut heuristic = Vec::new();
        if lsi_mode == LsiMode::GeneralDissipative {
            heuristic.push("lsi_universal_c".to_string());
        }
        heuristic.extend(["c1_prime", "c2_prime"].map(String::from));
        if opts.empirical_d1.is_none() {
            heuristic.extend(["c0_tilde", "c1_tilde"].map(String::from));
        }
        heuristic.push("moment_universal_c".to_string());

        Ok(Self {
            lsi_mode,
            c_ls,
            c0,
            grad_sq_bound,
            delta,
            d1,
            d2,
            d3,
            d4,
            d5,
            sigma_e_sq: sub.sigma_e_sq,
            nu: sub.nu,
            c5: sub.c5,
            parametrix: p,
            empirical_d1: opts.empirical_d1.is_some(),
            heuristic,
        })
    }

    /// `kappa = 4 beta c_LS`, the contraction time scale of the KL recursion.
    pub fn kappa(&self, beta: f64) -> f64 {
        4.0 * beta * self.c_ls
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRecursion {
    pub contraction: f64,
    pub per_step_add: f64,
    pub kappa: f64,
}

impl KlRecursion {
    /// `sum_{t < steps} contraction^t * per_step_add` in closed form.
    pub fn unrolled(&self, steps: usize) -> f64 {
        if self.contraction == 1.0 {
            return self.per_step_add * steps as f64;
        }
        let x = -(self.contraction.ln());
        self.per_step_add * (-(steps as f64) * x).exp_m1() / (-x).exp_m1()
    }
}

/// `KL_t <= contraction KL_{t-1} + per_step_add` with
/// `contraction = exp(-eta/kappa)` and
/// `per_step_add = eta (D2/kappa + D3/(2 beta) + beta D1/2)`.
pub fn kl_recursion_constants(dc: &DerivedConstants, eta: f64, beta: f64) -> Result<KlRecursion> {
    ensure_nonnegative("eta", eta)?;
    ensure_positive("beta", beta)?;
    let kappa = dc.kappa(beta);
    if eta >= kappa {
        return Err(LabError::Precondition(format!(
            "eta = {eta} must be below 4 beta c_LS = {kappa}"
        )));
    }
    Ok(KlRecursion {
        contraction: (-eta / kappa).exp(),
        per_step_add: eta * (dc.d2 / kappa + dc.d3 / (2.0 * beta) + beta * dc.d1 / 2.0),
        kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubExpParams {
    pub sigma_e_sq: f64,
    pub nu: f64,
    pub c5: f64,
}

/// Sub-exponential parameters of `f(W_T, Z)`.
///
/// The moment chain gives `E ||W||^{2p} <= ((a0 + a1) p)^p`, and the envelope
/// turns it into `E |f|^p <= (C0f + C1f)^p p^p`. `C5` doubles that sum to
/// account for centering; then `sigma_e^2 = 4 e^2 C5^2`, `nu = 1/(2 e C5)`.
pub fn subexp_params(lc: &LossConstants, beta: f64, d: usize, s_sq: f64, universal_c: f64) -> Result<SubExpParams> {
    ensure_positive("beta", beta)?;
    ensure_positive("moment_universal_c", universal_c)?;
    ensure_nonnegative("init_var", s_sq)?;
    let (big_m, m, b, a) = (lc.smoothness, lc.dissipativity, lc.dissipativity_offset, lc.origin_bound);
    let df = d as f64;
    let c_sq = universal_c * universal_c;
    let a0 = 2.0 * c_sq * (s_sq * df + (beta * b + df) / (beta * m));
    let a1 = 4.0 * c_sq * (s_sq + 1.0 / (beta * m));
    let k = (b / (2.0 * m) + a).max(0.5 * b * 3f64.ln());
    let c0f = 2.0 * k;
    let c1f = 2.0 * big_m.max(m / 3.0) * (a0 + a1);
    let c5 = 2.0 * (c0f + c1f);
    let e = std::f64::consts::E;
    Ok(SubExpParams {
        sigma_e_sq: 4.0 * e * e * c5 * c5,
        nu: 1.0 / (2.0 * e * c5),
        c5,
    })
}
