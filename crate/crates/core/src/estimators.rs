//! Monte Carlo estimators of the quantities the bounds consume or are
//! compared against.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::sg_variance_bound;
use crate::data::{draw_dataset, DataDistribution, Dataset, Sample};
use crate::error::{ensure_positive, LabError, Result};
use crate::loss::{LossConstants, LossModel};
use crate::rng::{substream, Role};
use crate::sgld::{batch_gradient, full_gradient, run_chain_indexed, ChainTrace, MinibatchSampler, SgldConfig};
use crate::stats::EstimateWithError;
use crate::vecops::{dist_sq, norm};

/// Loss used to measure the generalization gap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalLoss {
    /// The training loss itself.
    #[default]
    SameAsF,
    /// `1 / (1 + exp(-f / scale))`, valued in `(0, 1)` and therefore
    /// `1/4`-sub-Gaussian.
    Surrogate { scale: f64 },
}

impl EvalLoss {
    pub fn eval(&self, model: &dyn LossModel, w: &[f64], z: &Sample) -> f64 {
        let f = model.eval(w, z);
        match *self {
            EvalLoss::SameAsF => f,
            EvalLoss::Surrogate { scale } => 1.0 / (1.0 + (-f / scale).exp()),
        }
    }

    /// Sub-Gaussian proxy of the evaluation loss, when known.
    pub fn sigma_g_sq(&self, lc: &LossConstants) -> Option<f64> {
        match self {
            EvalLoss::SameAsF => lc.sigma_g_sq,
            EvalLoss::Surrogate { .. } => Some(0.25),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EvalLoss::SameAsF => Ok(()),
            EvalLoss::Surrogate { scale } => ensure_positive("scale", scale),
        }
    }
}

fn mean_loss(eval: &EvalLoss, model: &dyn LossModel, w: &[f64], samples: &[Sample]) -> f64 {
    samples.iter().map(|z| eval.eval(model, w, z)).sum::<f64>() / samples.len() as f64
}

/// Per-trial gaps `L_mu(W_T) - L_S(W_T)`.
///
/// Trial `i` trains on dataset stream `i` with chain index `i`, and estimates
/// `L_mu` on a fresh pool of `10 n` points from test-pool stream `i`.
pub fn gen_gap_samples(
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    n_trials: usize,
    eval: EvalLoss,
) -> Result<Vec<f64>> {
    gen_gap_samples_with_pool(model, mu, config, n_trials, eval, 10)
}

/// As [`gen_gap_samples`] with a test pool of `pool_factor * n` points.
pub fn gen_gap_samples_with_pool(
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    n_trials: usize,
    eval: EvalLoss,
    pool_factor: usize,
) -> Result<Vec<f64>> {
    if pool_factor == 0 {
        return Err(LabError::invalid("test_pool_factor", "must be at least 1"));
    }
    if n_trials < 2 {
        return Err(LabError::InsufficientSamples("need at least two trials for a standard error".into()));
    }
    eval.validate()?;
    config.validate()?;
    (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let ds = draw_dataset(mu, config.n, config.seed, i);
            let trace = run_chain_indexed(config, model, &ds, i)?;
            let w = trace.final_state();
            let pool = mu.draw(pool_factor * config.n, &mut substream(config.seed, i, Role::TestPool));
            Ok(mean_loss(&eval, model, w, &pool) - mean_loss(&eval, model, w, &ds.samples))
        })
        .collect()
}

pub fn empirical_gen_gap(
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    n_trials: usize,
    eval: EvalLoss,
) -> Result<EstimateWithError> {
    let gaps = gen_gap_samples(model, mu, config, n_trials, eval)?;
    Ok(EstimateWithError::from_samples("gen_gap", &gaps))
}

/// Independent draws of `(W_T, Z)` with `f(W_T, Z)` evaluated.
///
/// Sample `i` trains on dataset stream `i` with chain index `i` and draws `Z`
/// from test-pool stream `i`. Returns the loss values and the final states.
pub fn subexp_samples(
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    n_samples: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    config.validate()?;
    let pairs: Vec<(f64, Vec<f64>)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let ds = draw_dataset(mu, config.n, config.seed, i);
            let trace = run_chain_indexed(config, model, &ds, i)?;
            let z = mu.sample(&mut substream(config.seed, i, Role::TestPool));
            let w = trace.final_state().to_vec();
            Ok((model.eval(&w, &z), w))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Exact conditional variance `E_B ||grad F(w, B) - grad F_S(w)||^2` for
/// uniform size-`k` batches drawn without replacement:
/// `delta (1/n) sum_i ||grad f(w, z_i) - grad F_S(w)||^2`.
pub fn exact_grad_variance(model: &dyn LossModel, dataset: &Dataset, w: &[f64], k: usize) -> Result<f64> {
    let n = dataset.len();
    let delta = crate::bounds::minibatch_delta(n, k)?;
    let mut mean = vec![0.0; w.len()];
    full_gradient(model, w, &dataset.samples, &mut mean);
    let mut g = vec![0.0; w.len()];
    let spread: f64 = dataset
        .samples
        .iter()
        .map(|z| {
            model.grad_into(w, z, &mut g);
            dist_sq(&g, &mean)
        })
        .sum::<f64>()
        / n as f64;
    Ok(delta * spread)
}

/// Resampled conditional gradient variance at every stored state of `trace`.
///
/// Each estimate averages `||grad F(W_t, B) - grad F_S(W_t)||^2` over
/// `n_resamples` fresh batches, which is unbiased because the batch mean is
/// known exactly.
pub fn grad_variance_trace(
    model: &dyn LossModel,
    dataset: &Dataset,
    trace: &ChainTrace,
    batch_size: usize,
    n_resamples: usize,
) -> Result<Vec<(usize, EstimateWithError)>> {
    let mut sampler = MinibatchSampler::new(dataset.len(), batch_size)?;
    if sampler.is_full() {
        return Ok(trace
            .state_steps
            .iter()
            .map(|&t| (t, EstimateWithError::exact("grad_variance", 0.0, 0)))
            .collect());
    }
    if n_resamples < 2 {
        return Err(LabError::InsufficientSamples("need at least two resamples".into()));
    }
    let mut rng = substream(trace.seed, trace.chain_index, Role::Resample);
    let d = model.dim();
    let mut full = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut draws = vec![0.0; n_resamples];
    let mut out = Vec::with_capacity(trace.states.len());
    for (&t, w) in trace.state_steps.iter().zip(&trace.states) {
        full_gradient(model, w, &dataset.samples, &mut full);
        for slot in draws.iter_mut() {
            batch_gradient(model, w, &dataset.samples, sampler.sample(&mut rng), &mut g);
            *slot = dist_sq(&g, &full);
        }
        out.push((t, EstimateWithError::from_samples("grad_variance", &draws)));
    }
    Ok(out)
}

/// Counts stored states where the variance estimate exceeds the
/// mini-batch variance bound by more than three standard errors.
pub fn grad_variance_violations(
    lc: &LossConstants,
    trace: &ChainTrace,
    estimates: &[(usize, EstimateWithError)],
    n: usize,
    k: usize,
) -> Result<usize> {
    let mut violations = 0;
    for ((_, est), w) in estimates.iter().zip(&trace.states) {
        let bound = sg_variance_bound(lc, n, k, crate::vecops::norm_sq(w))?;
        if est.mean > bound + 3.0 * est.stderr {
            violations += 1;
        }
    }
    Ok(violations)
}

/// `||grad F_S(W_t) - grad F_{S'}(W_t)||^2` along the stored states of `trace`.
pub fn grad_stability_pair(model: &dyn LossModel, trace: &ChainTrace, s: &Dataset, s_prime: &Dataset) -> Vec<f64> {
    let d = model.dim();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    trace
        .states
        .iter()
        .map(|w| {
            full_gradient(model, w, &s.samples, &mut a);
            full_gradient(model, w, &s_prime.samples, &mut b);
            dist_sq(&a, &b)
        })
        .collect()
}

/// Gradient-stability statistic `E ||grad F(W_t, S) - grad F(W_t, S')||^2`
/// over `n_pairs` independent pairs, with the chain run on `S`.
///
/// Pair `p` uses dataset streams `2p` and `2p + 1` and chain index `p`.
pub fn grad_stability_trace(
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    config: &SgldConfig,
    n_pairs: usize,
) -> Result<Vec<(usize, EstimateWithError)>> {
    if n_pairs < 2 {
        return Err(LabError::InsufficientSamples("need at least two dataset pairs".into()));
    }
    config.validate()?;
    let per_pair: Vec<(Vec<usize>, Vec<f64>)> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|p| {
            let s = draw_dataset(mu, config.n, config.seed, 2 * p);
            let s_prime = draw_dataset(mu, config.n, config.seed, 2 * p + 1);
            let trace = run_chain_indexed(config, model, &s, p)?;
            let values = grad_stability_pair(model, &trace, &s, &s_prime);
            Ok((trace.state_steps, values))
        })
        .collect::<Result<_>>()?;
    let steps = per_pair[0].0.clone();
    Ok(steps
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let column: Vec<f64> = per_pair.iter().map(|(_, v)| v[j]).collect();
            (t, EstimateWithError::from_samples("grad_stability", &column))
        })
        .collect())
}

/// `E ||X||^p` for `X ~ N(0, s^2 I_d)`:
/// `s^p 2^{p/2} Gamma((d + p)/2) / Gamma(d/2)`.
pub fn gaussian_norm_moment(d: usize, s_sq: f64, p: u32) -> f64 {
    assert!(d > 0, "dimension must be positive");
    // Gamma(x + h) / Gamma(x) with x = d/2 and h = p/2, via Gamma(x+1) = x Gamma(x)
    let x = d as f64 / 2.0;
    let mut ratio = 1.0;
    let mut start = x;
    if p % 2 == 1 {
        // r(d) = Gamma((d+1)/2) / Gamma(d/2); r(1) = 1/sqrt(pi), r(2) = sqrt(pi)/2, r(d+2) = r(d)(d+1)/d
        let mut r = if d % 2 == 1 {
            1.0 / std::f64::consts::PI.sqrt()
        } else {
            std::f64::consts::PI.sqrt() / 2.0
        };
        let mut j = if d % 2 == 1 { 1 } else { 2 };
        while j < d {
            r *= (j + 1) as f64 / j as f64;
            j += 2;
        }
        ratio = r;
        start = x + 0.5;
    }
    for i in 0..p / 2 {
        ratio *= start + i as f64;
    }
    (2.0 * s_sq).powf(p as f64 / 2.0) * ratio
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PthMomentRow {
    pub p: u32,
    /// Monte Carlo `E ||W_T||^p`.
    pub moment: EstimateWithError,
    /// `(E ||W_T||^p)^{1/p}`.
    pub root: f64,
    /// `(E ||W_0||^p)^{1/p}` under the Gaussian initialization.
    pub init_root: f64,
    /// Smallest `C` with `root <= C init_root + C sqrt((p + beta b + d)/(beta m))`.
    pub fitted_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PthMomentReport {
    pub rows: Vec<PthMomentRow>,
    /// Largest `fitted_c / fitted_c(p_min)`.
    pub max_ratio: f64,
    /// Whether every fitted constant stays within twice the first one.
    pub bounded: bool,
}

/// Fits the constant of the p-th moment growth lemma on final states.
pub fn pth_moment_check(
    final_states: &[Vec<f64>],
    p_list: &[u32],
    lc: &LossConstants,
    beta: f64,
    d: usize,
    s_sq: f64,
) -> Result<PthMomentReport> {
    if p_list.is_empty() {
        return Err(LabError::invalid("p_list", "must not be empty"));
    }
    ensure_positive("beta", beta)?;
    let (m, b) = (lc.dissipativity, lc.dissipativity_offset);
    let norms: Vec<f64> = final_states.iter().map(|w| norm(w)).collect();
    let mut rows = Vec::with_capacity(p_list.len());
    for &p in p_list {
        if p == 0 || p > 12 {
            return Err(LabError::invalid("p_list", format!("p = {p} outside 1..=12")));
        }
        if norms.len() < 20 * p as usize {
            return Err(LabError::InsufficientSamples(format!(
                "{} states are too few for p = {p}; need {}",
                norms.len(),
                20 * p
            )));
        }
        let powers: Vec<f64> = norms.iter().map(|r| r.powi(p as i32)).collect();
        let moment = EstimateWithError::from_samples(format!("moment_p{p}"), &powers);
        let pf = p as f64;
        let root = moment.mean.powf(1.0 / pf);
        let init_root = gaussian_norm_moment(d, s_sq, p).powf(1.0 / pf);
        let drift = ((pf + beta * b + d as f64) / (beta * m)).sqrt();
        rows.push(PthMomentRow {
            p,
            moment,
            root,
            init_root,
            fitted_c: root / (init_root + drift),
        });
    }
    let c_ref = rows[0].fitted_c;
    let max_ratio = rows.iter().map(|r| r.fitted_c / c_ref).fold(0.0, f64::max);
    Ok(PthMomentReport {
        rows,
        max_ratio,
        bounded: max_ratio <= 2.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMgfRow {
    pub lambda: f64,
    pub log_mgf: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub envelope: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMgfReport {
    pub rows: Vec<LogMgfRow>,
    pub violations: usize,
    /// Mean of the centered samples; zero up to rounding.
    pub centered_mean: EstimateWithError,
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// `log mean exp(lambda x_i)` by log-sum-exp.
fn log_mean_exp(lambda: f64, centered: &[f64]) -> f64 {
    let hi = centered.iter().map(|x| lambda * x).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = centered.iter().map(|x| (lambda * x - hi).exp()).sum();
    hi + (sum / centered.len() as f64).ln()
}

fn center(samples: &[f64]) -> Vec<f64> {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter().map(|x| x - mean).collect()
}

/// Empirical centered log-MGF against the envelope `sigma_e^2 lambda^2 / 2`,
/// with 95% percentile-bootstrap bands.
pub fn logmgf_check(
    loss_samples: &[f64],
    sigma_e_sq: f64,
    nu: f64,
    lambda_grid: &[f64],
    seed: u64,
) -> Result<LogMgfReport> {
    if loss_samples.len() < 2 {
        return Err(LabError::InsufficientSamples("need at least two loss samples".into()));
    }
    ensure_positive("sigma_e_sq", sigma_e_sq)?;
    ensure_positive("nu", nu)?;
    let limit = 1.0 / (2.0 * nu);
    if let Some(l) = lambda_grid.iter().find(|l| l.is_nan() || l.abs() > limit) {
        return Err(LabError::invalid("lambda", format!("{l} outside [-1/(2 nu), 1/(2 nu)] = ±{limit}")));
    }
    let centered = center(loss_samples);
    let n = centered.len();
    let mut rng = substream(seed, 0, Role::Bootstrap);
    let resamples: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let pick: Vec<f64> = (0..n).map(|_| loss_samples[rng.random_range(0..n)]).collect();
            center(&pick)
        })
        .collect();
    let lo_idx = (0.025 * BOOTSTRAP_RESAMPLES as f64).floor() as usize;
    let hi_idx = (0.975 * BOOTSTRAP_RESAMPLES as f64).ceil() as usize - 1;
    let rows: Vec<LogMgfRow> = lambda_grid
        .iter()
        .map(|&lambda| {
            let log_mgf = log_mean_exp(lambda, &centered);
            let mut boot: Vec<f64> = resamples.iter().map(|r| log_mean_exp(lambda, r)).collect();
            boot.sort_by(f64::total_cmp);
            let envelope = 0.5 * sigma_e_sq * lambda * lambda;
            LogMgfRow {
                lambda,
                log_mgf,
                band_lo: boot[lo_idx],
                band_hi: boot[hi_idx],
                envelope,
                violated: log_mgf > envelope,
            }
        })
        .collect();
    Ok(LogMgfReport {
        violations: rows.iter().filter(|r| r.violated).count(),
        rows,
        centered_mean: EstimateWithError::from_samples("centered_loss", &centered),
    })
}

/// CSV rows `estimator,t_or_lambda,mean,stderr,n`.
pub fn estimates_csv<'a>(rows: impl IntoIterator<Item = (f64, &'a EstimateWithError)>) -> String {
    let mut out = String::from("estimator,t_or_lambda,mean,stderr,n\n");
    for (x, e) in rows {
        out.push_str(&format!("{},{},{},{},{}\n", e.estimator_name, x, e.mean, e.stderr, e.n_samples));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Labels, UniformBall};
    use crate::loss::{LogisticRidgeLoss, QuadraticLoss};
    use crate::sgld::run_chain;

    /// `f(w, z) = c`: carries no information about the data.
    struct ConstantLoss(LossConstants);

    impl LossModel for ConstantLoss {
        fn name(&self) -> &str {
            "constant"
        }
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _: &[f64], _: &Sample) -> f64 {
            0.5
        }
        fn grad_into(&self, _: &[f64], _: &Sample, out: &mut [f64]) {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
        fn constants(&self) -> &LossConstants {
            &self.0
        }
    }

    fn cfg(n: usize, k: usize, steps: usize) -> SgldConfig {
        SgldConfig {
            eta: 0.01,
            beta: 4.0,
            batch_size: k,
            n,
            steps,
            dim: 2,
            init_var: 1.0,
            seed: 11,
            strict_mode: false,
            lsi: Default::default(),
        }
    }

    fn ball() -> UniformBall {
        UniformBall::new(2, 1.0, Labels::None).unwrap()
    }

    #[test]
    fn gap_needs_two_trials() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        assert!(empirical_gen_gap(&q, &ball(), &cfg(10, 10, 5), 1, EvalLoss::SameAsF).is_err());
    }

    #[test]
    fn data_independent_loss_has_zero_gap() {
        let c = *QuadraticLoss::new(1.0, 1.0, 2).unwrap().constants();
        let gap = empirical_gen_gap(&ConstantLoss(c), &ball(), &cfg(10, 10, 5), 20, EvalLoss::SameAsF).unwrap();
        assert!(gap.mean.abs() < 1e-15 && gap.stderr < 1e-15);
    }

    #[test]
    fn gap_shrinks_with_more_data() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let small = empirical_gen_gap(&q, &ball(), &cfg(50, 50, 300), 30, EvalLoss::SameAsF).unwrap();
        let large = empirical_gen_gap(&q, &ball(), &cfg(400, 400, 300), 30, EvalLoss::SameAsF).unwrap();
        assert!(large.mean < small.mean, "{small:?} {large:?}");
    }

    #[test]
    fn surrogate_is_bounded() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let eval = EvalLoss::Surrogate { scale: 1.0 };
        let z = Sample::unlabeled(vec![0.3, 0.1]);
        for w in [[0.0, 0.0], [100.0, -50.0]] {
            let v = eval.eval(&q, &w, &z);
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(eval.sigma_g_sq(q.constants()), Some(0.25));
        assert_eq!(EvalLoss::SameAsF.sigma_g_sq(q.constants()), None);
    }

    #[test]
    fn full_batch_variance_is_exactly_zero() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let c = cfg(10, 10, 20);
        let ds = draw_dataset(&ball(), 10, 1, 0);
        let trace = run_chain(&c, &q, &ds).unwrap();
        let est = grad_variance_trace(&q, &ds, &trace, 10, 50).unwrap();
        assert!(est.iter().all(|(_, e)| e.mean == 0.0));
        assert_eq!(exact_grad_variance(&q, &ds, &[0.3, 0.2], 10).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_variance_matches_sampling_formula() {
        // R^2 Var_B(zbar_B) = R^2 delta (1/n) sum ||z_i - zbar||^2, whatever W is
        let r = 2.0;
        let q = QuadraticLoss::new(r, 1.0, 2).unwrap();
        let ds = draw_dataset(&ball(), 30, 4, 0);
        let zbar = ds.feature_mean();
        let spread = ds.samples.iter().map(|z| dist_sq(&z.x, &zbar)).sum::<f64>() / 30.0;
        let delta = crate::bounds::minibatch_delta(30, 5).unwrap();
        let exact = r * r * delta * spread;
        for w in [[0.0, 0.0], [3.0, -1.0]] {
            assert!((exact_grad_variance(&q, &ds, &w, 5).unwrap() / exact - 1.0).abs() < 1e-12);
        }
        let c = SgldConfig {
            n: 30,
            batch_size: 5,
            ..cfg(30, 5, 200)
        };
        let trace = run_chain(&c, &q, &ds).unwrap();
        let est = grad_variance_trace(&q, &ds, &trace, 5, 4000).unwrap();
        for (_, e) in [&est[10], &est[150]] {
            assert!(e.within(exact, 3.5), "{e:?} vs {exact}");
        }
        let (a, b) = (&est[10].1, &est[150].1);
        assert!((a.mean - b.mean).abs() <= 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
    }

    #[test]
    fn variance_estimates_respect_the_minibatch_bound() {
        let l = LogisticRidgeLoss::new(0.5, 1.0, 2).unwrap();
        let mu = UniformBall::new(2, 1.0, Labels::NoisySign { flip_prob: 0.1 }).unwrap();
        let c = cfg(40, 4, 300);
        let ds = draw_dataset(&mu, 40, 2, 0);
        let trace = run_chain(&c, &l, &ds).unwrap();
        let est = grad_variance_trace(&l, &ds, &trace, 4, 200).unwrap();
        assert_eq!(grad_variance_violations(l.constants(), &trace, &est, 40, 4).unwrap(), 0);
    }

    #[test]
    fn stability_on_identical_datasets_is_zero() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let ds = draw_dataset(&ball(), 20, 1, 0);
        let trace = run_chain(&cfg(20, 5, 50), &q, &ds).unwrap();
        assert!(grad_stability_pair(&q, &trace, &ds, &ds).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_stability_matches_closed_form() {
        let r = 1.5;
        let q = QuadraticLoss::new(r, 1.0, 2).unwrap();
        let s = draw_dataset(&ball(), 20, 1, 0);
        let s2 = draw_dataset(&ball(), 20, 1, 1);
        let trace = run_chain(&cfg(20, 5, 50), &q, &s).unwrap();
        let closed = r * r * dist_sq(&s.feature_mean(), &s2.feature_mean());
        for v in grad_stability_pair(&q, &trace, &s, &s2) {
            assert!((v / closed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_scales_inversely_with_n() {
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let mean_at = |n: usize| {
            let est = grad_stability_trace(&q, &ball(), &cfg(n, n, 5), 400).unwrap();
            est.last().unwrap().1.mean
        };
        let ratio = mean_at(25) / mean_at(100);
        assert!((ratio - 4.0).abs() < 0.8, "{ratio}");
    }

    #[test]
    fn gaussian_norm_moments() {
        // d = 2: ||X||^2 / s^2 ~ chi^2_2, E ||X||^p = (2 s^2)^{p/2} Gamma(1 + p/2)
        assert!((gaussian_norm_moment(2, 1.0, 2) - 2.0).abs() < 1e-14);
        assert!((gaussian_norm_moment(2, 1.0, 4) - 8.0).abs() < 1e-14);
        assert!((gaussian_norm_moment(3, 2.0, 2) - 6.0).abs() < 1e-14);
        // d = 1, p = 1: E|X| = s sqrt(2/pi)
        assert!((gaussian_norm_moment(1, 1.0, 1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        // d = 2, p = 1: sqrt(pi/2) s
        assert!((gaussian_norm_moment(2, 1.0, 1) - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-15);
        // d = 3, p = 3: E ||X||^3 = 8 sqrt(2/pi) s^3 (chi with 3 dof)
        assert!((gaussian_norm_moment(3, 1.0, 3) - 8.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn pth_moment_on_gaussian_samples_is_bounded() {
        let mut src = crate::rng::NormalSource::new(substream(5, 0, Role::Init));
        let states: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                let mut w = vec![0.0; 2];
                src.fill(&mut w);
                w
            })
            .collect();
        let q = QuadraticLoss::new(1.0, 1.0, 2).unwrap();
        let rep = pth_moment_check(&states, &[2, 4, 6, 8, 10, 12], q.constants(), 4.0, 2, 1.0).unwrap();
        assert!(rep.bounded, "{rep:?}");
        let p2 = &rep.rows[0];
        assert!(p2.moment.within(2.0, 3.0));
        assert!(pth_moment_check(&states[..100], &[12], q.constants(), 4.0, 2, 1.0).is_err());
    }

    #[test]
    fn logmgf_at_zero_is_exactly_zero() {
        let samples: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let rep = logmgf_check(&samples, 4.0, 0.5, &[-0.5, 0.0, 0.5], 3).unwrap();
        assert_eq!(rep.rows[1].log_mgf, 0.0);
        assert_eq!(rep.violations, 0);
        assert!(rep.centered_mean.mean.abs() < 1e-12);
        for r in &rep.rows {
            assert!(r.band_lo <= r.band_hi);
        }
    }

    #[test]
    fn logmgf_rejects_lambda_outside_range() {
        assert!(logmgf_check(&[0.0, 1.0], 1.0, 1.0, &[0.6], 1).is_err());
    }

    #[test]
    fn logmgf_flags_heavy_tails() {
        // a tight envelope is violated by a spread-out sample
        let samples: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let rep = logmgf_check(&samples, 1e-3, 1.0, &[0.25, 0.5], 1).unwrap();
        assert_eq!(rep.violations, 2);
    }

    #[test]
    fn csv_rows() {
        let e = EstimateWithError::from_samples("gen_gap", &[1.0, 2.0, 3.0]);
        let csv = estimates_csv([(0.0, &e)]);
        assert_eq!(csv, format!("estimator,t_or_lambda,mean,stderr,n\ngen_gap,0,2,{},3\n", e.stderr));
    }
}
