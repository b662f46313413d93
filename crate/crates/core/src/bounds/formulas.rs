use serde::{Deserialize, Serialize};

use super::{kl_recursion_constants, DerivedConstants};
use crate::error::{ensure_nonnegative, ensure_positive, LabError, Result};
use crate::loss::LossConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeIndependentBound {
    pub value: f64,
    /// Upper bound on `KL(P_{W_T|S} | P_{W_T|S'})`, hence on `I(W_T; S)`.
    pub kl_bound: f64,
    /// Whether `eta T >= 4 beta c_LS`, past which the bound no longer moves.
    pub saturated: bool,
}

/// Gap bound from the unrolled KL recursion:
/// `KL_T <= kappa (1 ^ eta T / kappa) c / (1 - eta/kappa)` where `c` is the
/// per-unit-time additive term, then `sqrt(2 sigma_g^2 KL_T / n)`.
pub fn bound_time_independent(
    dc: &DerivedConstants,
    eta: f64,
    beta: f64,
    steps: usize,
    n: usize,
    sigma_g_sq: f64,
) -> Result<TimeIndependentBound> {
    ensure_positive("eta", eta)?;
    ensure_positive("sigma_g_sq", sigma_g_sq)?;
    if n == 0 {
        return Err(LabError::invalid("n", "must be at least 1"));
    }
    let rec = kl_recursion_constants(dc, eta, beta)?;
    let kappa = rec.kappa;
    let horizon = eta * steps as f64;
    let growth = 1f64.min(horizon / kappa);
    let per_unit_time = rec.per_step_add / eta;
    let kl_bound = kappa * growth * per_unit_time / (1.0 - eta / kappa);
    Ok(TimeIndependentBound {
        value: bound_xu_raginsky(sigma_g_sq, n, kl_bound)?,
        kl_bound,
        saturated: horizon >= kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PensiaBound {
    pub value: f64,
    pub mi_bound: f64,
}

/// `I <= sum_t (d/2) log(1 + beta eta Var_t / d)`, turned into a gap bound.
pub fn bound_pensia(
    variance_trace: &[f64],
    eta: f64,
    beta: f64,
    d: usize,
    n: usize,
    sigma_g_sq: f64,
) -> Result<PensiaBound> {
    ensure_nonnegative("eta", eta)?;
    ensure_positive("beta", beta)?;
    if d == 0 {
        return Err(LabError::invalid("dim", "must be at least 1"));
    }
    let df = d as f64;
    let mut mi_bound = 0.0;
    for &v in variance_trace {
        if !(v.is_finite() && v >= 0.0) {
            return Err(LabError::invalid("variance_trace", format!("entry {v} is not a variance")));
        }
        mi_bound += 0.5 * df * (beta * eta * v / df).ln_1p();
    }
    Ok(PensiaBound {
        value: bound_xu_raginsky(sigma_g_sq, n, mi_bound)?,
        mi_bound,
    })
}

/// `sqrt(2 sigma_g^2 I / n)`.
pub fn bound_xu_raginsky(sigma_g_sq: f64, n: usize, mi_upper: f64) -> Result<f64> {
    ensure_nonnegative("sigma_g_sq", sigma_g_sq)?;
    ensure_nonnegative("mi_upper", mi_upper)?;
    if n == 0 {
        return Err(LabError::invalid("n", "must be at least 1"));
    }
    Ok((2.0 * sigma_g_sq * mi_upper / n as f64).sqrt())
}

/// `(expm1(u)/u - 1)`, accurate for small `u`.
fn expm1_ratio_minus_one(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 1..10 {
            term *= u / (j + 1) as f64;
            sum += term;
        }
        sum
    } else {
        u.exp_m1() / u - 1.0
    }
}

/// `integral_0^T exp(-(T - t) c) v(t) dt` with `v` linear between samples.
///
/// The exponential is integrated exactly against each linear piece, so a
/// constant integrand reproduces `(v / c)(1 - exp(-c T))` to rounding.
fn weighted_integral(times: &[f64], values: &[f64], c: f64, t_end: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..times.len() {
        let (t0, t1) = (times[i - 1], times[i]);
        let u = c * (t1 - t0);
        let e0 = (c * (t0 - t_end)).exp();
        let q = expm1_ratio_minus_one(u);
        let w0 = e0 / c * q;
        let w1 = e0 / c * (u.exp_m1() - q);
        total += w0 * values[i - 1] + w1 * values[i];
    }
    total
}

/// `sqrt((2 beta sigma_g^2 / n) integral_0^T exp(-(T - t) R/4) v(t) dt)` with
/// `v(t) = E ||grad F(W_t, S) - grad F(W_t, S')||^2` sampled at `times`.
pub fn bound_strongly_convex(
    times: &[f64],
    values: &[f64],
    r: f64,
    beta: f64,
    n: usize,
    sigma_g_sq: f64,
    t_end: f64,
) -> Result<f64> {
    if times.is_empty() {
        return Err(LabError::EmptySupport("gradient-difference trace is empty".into()));
    }
    if times.len() != values.len() {
        return Err(LabError::DimensionMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    ensure_positive("strong_convexity", r)?;
    ensure_positive("beta", beta)?;
    ensure_nonnegative("sigma_g_sq", sigma_g_sq)?;
    if n == 0 {
        return Err(LabError::invalid("n", "must be at least 1"));
    }
    let tol = 1e-9 * t_end.abs().max(1.0);
    if times[0].abs() > tol || (times[times.len() - 1] - t_end).abs() > tol {
        return Err(LabError::invalid("grad_diff_trace", format!("must cover [0, {t_end}]")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::invalid("grad_diff_trace", "times must increase"));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(LabError::invalid("grad_diff_trace", format!("entry {v} is negative")));
    }
    let integral = weighted_integral(times, values, r / 4.0, t_end);
    Ok((2.0 * beta * sigma_g_sq / n as f64 * integral).sqrt())
}

/// `C1 (eta T ^ n (C2 + 1)/(n - k)) (k/(n sqrt(eta)) + sqrt(eta))`.
pub fn bound_farghly_shape(c1: f64, c2: f64, eta: f64, steps: usize, n: usize, k: usize) -> Result<f64> {
    ensure_positive("c1", c1)?;
    ensure_positive("c2", c2)?;
    ensure_positive("eta", eta)?;
    if n <= k {
        return Err(LabError::invalid("n", format!("need n > k, got n = {n}, k = {k}")));
    }
    let (nf, kf) = (n as f64, k as f64);
    let horizon = (eta * steps as f64).min(nf * (c2 + 1.0) / (nf - kf));
    Ok(c1 * horizon * (kf / (nf * eta.sqrt()) + eta.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiBranch {
    SquareRoot,
    Linear,
}

/// Inverse rate function of a `(sigma_e^2, nu)` sub-exponential loss.
///
/// The knee sits at `sigma_e^2 / (2 nu^2)`, where both branches equal
/// `sigma_e^2 / nu`.
pub fn psi_star_inverse(y: f64, sigma_e_sq: f64, nu: f64) -> (f64, PsiBranch) {
    let knee = sigma_e_sq / (2.0 * nu * nu);
    if y <= knee {
        ((2.0 * sigma_e_sq * y).sqrt(), PsiBranch::SquareRoot)
    } else {
        (nu * y + sigma_e_sq / (2.0 * nu), PsiBranch::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubExpGen {
    pub value: f64,
    pub branch: PsiBranch,
}

pub fn bound_subexp_gen(y: f64, sigma_e_sq: f64, nu: f64) -> Result<SubExpGen> {
    ensure_nonnegative("y", y)?;
    ensure_positive("sigma_e_sq", sigma_e_sq)?;
    ensure_positive("nu", nu)?;
    let (value, branch) = psi_star_inverse(y, sigma_e_sq, nu);
    Ok(SubExpGen { value, branch })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRisk {
    pub total: f64,
    pub gen_term: f64,
    /// Order-level: leading constants only.
    pub convergence_term: f64,
    pub minimization_term: f64,
}

/// Generalization + convergence + minimization decomposition of the excess
/// risk.
///
/// The convergence term is `(M sigma + M sqrt(b/m)) sqrt(c_LS (e^{-2 T eta /
/// (beta c_LS)} + eta))` with `sigma^2 = C0`; the minimization term is
/// `(d / 2 beta) log((e M / m)(b beta / d + 1))`.
pub fn excess_risk_bound(
    lc: &LossConstants,
    dc: &DerivedConstants,
    eta: f64,
    beta: f64,
    d: usize,
    steps: usize,
    gen_bound: f64,
) -> Result<ExcessRisk> {
    ensure_nonnegative("gen_bound", gen_bound)?;
    let minimization_term = minimization_error(lc, beta, d)?;
    let (big_m, b, m) = (lc.smoothness, lc.dissipativity_offset, lc.dissipativity);
    let lead = big_m * dc.c0.sqrt() + big_m * (b / m).sqrt();
    let kl_to_gibbs = (-2.0 * steps as f64 * eta / (beta * dc.c_ls)).exp() + eta;
    let convergence_term = lead * (dc.c_ls * kl_to_gibbs).sqrt();
    Ok(ExcessRisk {
        total: gen_bound + convergence_term + minimization_term,
        gen_term: gen_bound,
        convergence_term,
        minimization_term,
    })
}

/// `(d / 2 beta) log((e M / m)(b beta / d + 1))`.
pub fn minimization_error(lc: &LossConstants, beta: f64, d: usize) -> Result<f64> {
    ensure_positive("beta", beta)?;
    if d == 0 {
        return Err(LabError::invalid("dim", "must be at least 1"));
    }
    let df = d as f64;
    let ratio = std::f64::consts::E * lc.smoothness / lc.dissipativity;
    Ok(df / (2.0 * beta) * (ratio * (lc.dissipativity_offset * beta / df + 1.0)).ln())
}
