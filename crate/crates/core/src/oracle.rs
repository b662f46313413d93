//! Exact law of full-batch SGLD on the quadratic loss.
//!
//! With `grad F_S(w) = R (w - zbar_S)` the chain is a discrete
//! Ornstein-Uhlenbeck recursion, so an isotropic Gaussian initial law stays
//! Gaussian and every KL divergence between dataset-conditioned laws is
//! available in closed form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{draw_dataset, DataDistribution};
use crate::error::{ensure_positive, LabError, Result};
use crate::sgld::{ChainTrace, SgldConfig};
use crate::stats::EstimateWithError;
use crate::vecops::{dist_sq, norm};

/// Isotropic Gaussian `N(mean, var I)` at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: Vec<f64>,
    pub var: f64,
    pub t: usize,
}

impl GaussianState {
    /// The SGLD initial law `N(0, s^2 I_d)`.
    pub fn initial(d: usize, s_sq: f64) -> Self {
        Self {
            mean: vec![0.0; d],
            var: s_sq,
            t: 0,
        }
    }
}

/// Whether `|1 - eta R| < 1`, i.e. the affine recursion contracts.
pub fn ou_stable(eta: f64, r: f64) -> bool {
    eta * r > 0.0 && eta * r < 2.0
}

/// One step of the exact law. Computed even when `eta R >= 2`, where the
/// recursion diverges; check [`ou_stable`] first.
pub fn ou_step(state: &GaussianState, eta: f64, beta: f64, r: f64, zbar: &[f64]) -> GaussianState {
    let a = 1.0 - eta * r;
    GaussianState {
        mean: state
            .mean
            .iter()
            .zip(zbar)
            .map(|(m, z)| a * m + eta * r * z)
            .collect(),
        var: a * a * state.var + 2.0 * eta / beta,
        t: state.t + 1,
    }
}

/// `1 / (beta R (1 - eta R / 2))`, the fixed point of the variance recursion.
pub fn stationary_variance(eta: f64, beta: f64, r: f64) -> f64 {
    1.0 / (beta * r * (1.0 - eta * r / 2.0))
}

/// Law at step `t` from `N(0, s^2 I)`:
/// `mean = (1 - a^t) zbar`, `var = a^{2t} s^2 + (2 eta/beta)(1 - a^{2t})/(1 - a^2)`.
pub fn closed_form(d: usize, s_sq: f64, eta: f64, beta: f64, r: f64, zbar: &[f64], t: usize) -> GaussianState {
    debug_assert_eq!(zbar.len(), d);
    let a = 1.0 - eta * r;
    let at = a.powi(t as i32);
    let a2t = at * at;
    let noise = if (1.0 - a * a).abs() < f64::EPSILON {
        2.0 * eta / beta * t as f64
    } else {
        2.0 * eta / beta * (1.0 - a2t) / (1.0 - a * a)
    };
    GaussianState {
        mean: zbar.iter().map(|z| (1.0 - at) * z).collect(),
        var: a2t * s_sq + noise,
        t,
    }
}

/// States `0..=steps` of the recursion.
pub fn oracle_trace(d: usize, s_sq: f64, eta: f64, beta: f64, r: f64, zbar: &[f64], steps: usize) -> Vec<GaussianState> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = GaussianState::initial(d, s_sq);
    out.push(s.clone());
    for _ in 0..steps {
        s = ou_step(&s, eta, beta, r, zbar);
        out.push(s.clone());
    }
    out
}

/// `KL(N(mu_p, vp I) | N(mu_q, vq I))`
/// `= (1/2)[d vp/vq + ||mu_p - mu_q||^2 / vq - d + d log(vq/vp)]`.
pub fn gaussian_kl(p: &GaussianState, q: &GaussianState) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(LabError::DimensionMismatch {
            expected: p.mean.len(),
            got: q.mean.len(),
        });
    }
    ensure_positive("var", p.var)?;
    ensure_positive("var", q.var)?;
    let d = p.mean.len() as f64;
    let sq = dist_sq(&p.mean, &q.mean);
    if p.var == q.var {
        return Ok(sq / (2.0 * q.var));
    }
    let ratio = p.var / q.var;
    Ok(0.5 * (d * ratio + sq / q.var - d - d * ratio.ln()))
}

/// KL between general Gaussians via Cholesky factors.
pub fn gaussian_kl_full(
    mean_p: &DVector<f64>,
    cov_p: &DMatrix<f64>,
    mean_q: &DVector<f64>,
    cov_q: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean_p.len();
    if mean_q.len() != d || cov_p.shape() != (d, d) || cov_q.shape() != (d, d) {
        return Err(LabError::DimensionMismatch {
            expected: d,
            got: mean_q.len(),
        });
    }
    let chol_p = cov_p
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::invalid("cov_p", "not positive definite"))?;
    let chol_q = cov_q
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::invalid("cov_q", "not positive definite"))?;
    let trace = chol_q.solve(cov_p).trace();
    let diff = mean_q - mean_p;
    let maha = diff.dot(&chol_q.solve(&diff));
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_ratio = logdet(&chol_q.l()) - logdet(&chol_p.l());
    Ok(0.5 * (trace + maha - d as f64 + log_ratio))
}

/// `KL(P_{W_t|S} | P_{W_t|S'})` for `t = 0..=steps`, both chains started
/// from the same `N(0, s^2 I)`.
pub fn kl_trace(
    zbar_s: &[f64],
    zbar_s_prime: &[f64],
    s_sq: f64,
    eta: f64,
    beta: f64,
    r: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let d = zbar_s.len();
    let a = oracle_trace(d, s_sq, eta, beta, r, zbar_s, steps);
    let b = oracle_trace(d, s_sq, eta, beta, r, zbar_s_prime, steps);
    a.iter().zip(&b).map(|(p, q)| gaussian_kl(p, q)).collect()
}

/// Monte Carlo over dataset pairs of the exact `KL(P_{W_T|S} | P_{W_T|S'})`,
/// an upper bound on `I(W_T; S)`. Pair `p` uses dataset streams `2p`, `2p+1`.
pub fn oracle_mi_upper(
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    r: f64,
    n_pairs: usize,
) -> Result<EstimateWithError> {
    if n_pairs < 2 {
        return Err(LabError::InsufficientSamples("need at least two dataset pairs".into()));
    }
    config.validate()?;
    ensure_positive("strong_convexity", r)?;
    let per_pair: Vec<f64> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|p| {
            let s = draw_dataset(mu, config.n, config.seed, 2 * p);
            let s2 = draw_dataset(mu, config.n, config.seed, 2 * p + 1);
            pair_kl(&s.feature_mean(), &s2.feature_mean(), config, r)
        })
        .collect::<Result<_>>()?;
    Ok(EstimateWithError::from_samples("oracle_mi_upper", &per_pair))
}

fn pair_kl(zbar_s: &[f64], zbar_s_prime: &[f64], config: &SgldConfig, r: f64) -> Result<f64> {
    let d = zbar_s.len();
    let (eta, beta, s_sq, t) = (config.eta, config.beta, config.init_var, config.steps);
    gaussian_kl(
        &closed_form(d, s_sq, eta, beta, r, zbar_s, t),
        &closed_form(d, s_sq, eta, beta, r, zbar_s_prime, t),
    )
}

/// One ensemble statistic compared against the exact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckRow {
    pub t: usize,
    pub coord: usize,
    /// `"mean"` or `"var"`.
    pub stat: String,
    pub estimate: EstimateWithError,
    pub exact: f64,
    pub within: bool,
}

/// Compares per-coordinate means and variances of chains trained on the
/// dataset with feature mean `zbar` against [`closed_form`], at each step in
/// `times` (which must be stored). Variances are estimated around the exact
/// mean, so the estimator is unbiased. Agreement means `k` standard errors.
pub fn check_ensemble(
    traces: &[ChainTrace],
    config: &SgldConfig,
    r: f64,
    zbar: &[f64],
    times: &[usize],
    k: f64,
) -> Result<Vec<EnsembleCheckRow>> {
    if traces.len() < 2 {
        return Err(LabError::InsufficientSamples("need at least two chains".into()));
    }
    let d = zbar.len();
    let mut rows = Vec::with_capacity(2 * d * times.len());
    for &t in times {
        let idx = traces[0]
            .state_steps
            .iter()
            .position(|&s| s == t)
            .ok_or_else(|| LabError::invalid("times", format!("step {t} was not stored")))?;
        let exact = closed_form(d, config.init_var, config.eta, config.beta, r, zbar, t);
        for i in 0..d {
            let xs: Vec<f64> = traces.iter().map(|tr| tr.states[idx][i]).collect();
            let mean = EstimateWithError::from_samples("mean", &xs);
            let sq: Vec<f64> = xs.iter().map(|x| (x - exact.mean[i]).powi(2)).collect();
            let var = EstimateWithError::from_samples("var", &sq);
            for (stat, est, target) in [("mean", mean, exact.mean[i]), ("var", var, exact.var)] {
                rows.push(EnsembleCheckRow {
                    t,
                    coord: i,
                    stat: stat.into(),
                    within: est.within(target, k),
                    estimate: est,
                    exact: target,
                });
            }
        }
    }
    Ok(rows)
}

/// Constants of the discrete strongly convex KL recursion:
/// contraction `exp(-eta R / 4)`, additive term `eta (beta/2) sup_stability`.
pub fn strongly_convex_recursion(eta: f64, beta: f64, r: f64, sup_stability: f64) -> (f64, f64) {
    ((-eta * r / 4.0).exp(), eta * beta / 2.0 * sup_stability)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRecursionCheck {
    pub steps_checked: usize,
    pub violations: usize,
    /// `min_t (contraction KL_{t-1} + per_step_add - KL_t)`.
    pub worst_slack: f64,
    /// Steps where the inequality failed (first 100).
    pub violating_steps: Vec<usize>,
}

/// Checks `KL_t <= contraction KL_{t-1} + per_step_add` at every step.
pub fn verify_kl_recursion(kl: &[f64], contraction: f64, per_step_add: f64) -> KlRecursionCheck {
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    let mut violating_steps = Vec::new();
    for t in 1..kl.len() {
        let slack = contraction * kl[t - 1] + per_step_add - kl[t];
        worst_slack = worst_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
            if violating_steps.len() < 100 {
                violating_steps.push(t);
            }
        }
    }
    KlRecursionCheck {
        steps_checked: kl.len().saturating_sub(1),
        violations,
        worst_slack,
        violating_steps,
    }
}

/// Raw moments `E Y^j`, `j = 0..=order`, of a noncentral chi-square with
/// `d` degrees of freedom and noncentrality `lambda`, from the cumulants
/// `kappa_j = 2^{j-1} (j-1)! (d + j lambda)`.
pub fn noncentral_chi2_moments(d: usize, lambda: f64, order: usize) -> Vec<f64> {
    let kappa: Vec<f64> = (0..=order)
        .map(|j| {
            if j == 0 {
                0.0
            } else {
                let fact: f64 = (1..j).map(|i| i as f64).product();
                2f64.powi(j as i32 - 1) * fact * (d as f64 + j as f64 * lambda)
            }
        })
        .collect();
    let mut raw = vec![1.0; order + 1];
    for n in 1..=order {
        let mut binom = 1.0; // C(n-1, j-1)
        let mut acc = 0.0;
        for j in 1..=n {
            if j > 1 {
                binom = binom * (n - j + 1) as f64 / (j - 1) as f64;
            }
            acc += binom * kappa[j] * raw[n - j];
        }
        raw[n] = acc;
    }
    raw
}

/// `E ||X||^p` for `X ~ N(mean, var I)` and even `p`.
pub fn gaussian_norm_moment_even(state: &GaussianState, p: u32) -> Result<f64> {
    if !p.is_multiple_of(2) {
        return Err(LabError::invalid("p", "must be even"));
    }
    ensure_positive("var", state.var)?;
    let lambda = crate::vecops::norm_sq(&state.mean) / state.var;
    let half = (p / 2) as usize;
    let raw = noncentral_chi2_moments(state.mean.len(), lambda, half);
    Ok(state.var.powi(half as i32) * raw[half])
}

/// CSV `t,mean_norm,var,kl`.
pub fn trace_csv(states: &[GaussianState], kl: &[f64]) -> String {
    let mut out = String::from("t,mean_norm,var,kl\n");
    for (s, k) in states.iter().zip(kl) {
        out.push_str(&format!("{},{},{},{}\n", s.t, norm(&s.mean), s.var, k));
    }
    out
}
