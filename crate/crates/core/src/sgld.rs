//! The SGLD recursion
//!
//! ```text
//! W_{t+1} = W_t - eta * grad F(W_t, B_t) + sqrt(2 eta / beta) * xi_t
//! ```
//!
//! with `B_t` uniform over size-`k` subsets of the dataset and `xi_t` standard
//! Gaussian, plus seeded single-chain and ensemble drivers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{lsi_constant, LsiMode};
use crate::data::{draw_dataset, DataDistribution, Dataset, Sample};
use crate::error::{ensure_positive, LabError, Result};
use crate::loss::{check_dim, LossConstants, LossModel};
use crate::rng::{substream, LabRng, NormalSource, Role};
use crate::vecops::{axpy, dist_sq, norm, norm_sq};

/// Largest number of states kept per chain before striding kicks in.
pub const MAX_STORED_STATES: usize = 10_000;

/// How the LSI constant used by strict-mode checks is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiSettings {
    #[serde(default)]
    pub mode: LsiMode,
    /// Universal constant of the Gibbs-measure LSI bound (unknown; 1 by default).
    #[serde(default = "one")]
    pub universal_c: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LsiSettings {
    fn default() -> Self {
        Self {
            mode: LsiMode::Auto,
            universal_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    pub eta: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub n: usize,
    pub steps: usize,
    pub dim: usize,
    /// Per-coordinate variance `s^2` of the Gaussian initial law.
    pub init_var: f64,
    pub seed: u64,
    #[serde(default)]
    pub strict_mode: bool,
    #[serde(default)]
    pub lsi: LsiSettings,
}

/// One failed range condition on `(eta, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionFailure {
    pub condition: String,
    pub value: f64,
    pub limit: f64,
}

impl std::fmt::Display for PreconditionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (value {}, limit {})", self.condition, self.value, self.limit)
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(LabError::invalid("eta", "must be finite and nonnegative"));
        }
        ensure_positive("beta", self.beta)?;
        ensure_positive("init_var", self.init_var)?;
        if self.n == 0 {
            return Err(LabError::invalid("n", "must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.n {
            return Err(LabError::invalid(
                "batch_size",
                format!("need 1 <= k <= n, got k = {}, n = {}", self.batch_size, self.n),
            ));
        }
        if self.dim == 0 {
            return Err(LabError::invalid("dim", "must be at least 1"));
        }
        Ok(())
    }

    /// Range conditions `beta >= 2/m`, `eta < 1`, `eta < m/(5M^2)` and
    /// `eta < 4 beta c_LS` that fail for a loss with constants `c`.
    pub fn precondition_failures(&self, c: &LossConstants) -> Result<Vec<PreconditionFailure>> {
        let mut failures = Vec::new();
        let beta_min = 2.0 / c.dissipativity;
        if self.beta < beta_min {
            failures.push(PreconditionFailure {
                condition: "beta >= 2/m".into(),
                value: self.beta,
                limit: beta_min,
            });
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            failures.push(PreconditionFailure {
                condition: "0 < eta < 1".into(),
                value: self.eta,
                limit: 1.0,
            });
        }
        let eta_smooth = c.dissipativity / (5.0 * c.smoothness * c.smoothness);
        if self.eta >= eta_smooth {
            failures.push(PreconditionFailure {
                condition: "eta < m/(5M^2)".into(),
                value: self.eta,
                limit: eta_smooth,
            });
        }
        // c_LS is only defined once beta >= 2/m holds in the general mode
        match lsi_constant(c, self.beta, self.dim, self.lsi.mode, self.lsi.universal_c) {
            Ok(c_ls) => {
                let limit = 4.0 * self.beta * c_ls;
                if self.eta >= limit {
                    failures.push(PreconditionFailure {
                        condition: "eta < 4 beta c_LS".into(),
                        value: self.eta,
                        limit,
                    });
                }
            }
            Err(_) if !failures.is_empty() => {}
            Err(e) => return Err(e),
        }
        Ok(failures)
    }

    pub fn stride(&self) -> usize {
        if self.steps <= MAX_STORED_STATES {
            1
        } else {
            self.steps.div_ceil(MAX_STORED_STATES)
        }
    }
}

/// Scalars recorded at every step `t = 0..=T`, evaluated at `W_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub w_norm_sq: f64,
    pub grad_minibatch_norm: f64,
    pub grad_fullbatch_norm: f64,
    /// `||grad F(W_t, B) - grad F_S(W_t)||^2` for one fresh batch `B`; an
    /// unbiased one-sample estimate of the conditional gradient variance.
    pub grad_var_sample: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub seed: u64,
    pub chain_index: u64,
    pub dataset_id: u64,
    pub stride: usize,
    /// Steps at which `states` were stored: multiples of `stride`, plus `T`.
    pub state_steps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
    /// Gaussian variates consumed by the noise stream.
    pub noise_draws: u64,
}

impl ChainTrace {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("a trace always holds W_0")
    }

    pub fn steps(&self) -> usize {
        *self.state_steps.last().expect("a trace always holds W_0")
    }

    /// Per-step columns as CSV, one row per `t`.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("t,w_norm_sq,grad_var_sample,grad_fullbatch_norm,grad_minibatch_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t, r.w_norm_sq, r.grad_var_sample, r.grad_fullbatch_norm, r.grad_minibatch_norm
            ));
        }
        out
    }
}

/// Draws `W_0 ~ N(0, s^2 I_d)`.
pub fn sample_initial(d: usize, s_sq: f64, noise: &mut NormalSource) -> Result<Vec<f64>> {
    ensure_positive("init_var", s_sq)?;
    let mut w = vec![0.0; d];
    noise.fill(&mut w);
    let s = s_sq.sqrt();
    w.iter_mut().for_each(|v| *v *= s);
    Ok(w)
}

/// Uniform size-`k` subsets of `0..n` by partial Fisher-Yates.
///
/// The permutation buffer is reused between draws; partial Fisher-Yates gives
/// a uniform subset from any starting arrangement.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    perm: Vec<usize>,
    k: usize,
}

impl MinibatchSampler {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(LabError::invalid(
                "batch_size",
                format!("need 1 <= k <= n, got k = {k}, n = {n}"),
            ));
        }
        Ok(Self {
            perm: (0..n).collect(),
            k,
        })
    }

    pub fn is_full(&self) -> bool {
        self.k == self.perm.len()
    }

    pub fn sample(&mut self, rng: &mut LabRng) -> &[usize] {
        let n = self.perm.len();
        if self.k < n {
            for i in 0..self.k {
                let j = rng.random_range(i..n);
                self.perm.swap(i, j);
            }
        }
        &self.perm[..self.k]
    }
}

pub fn sample_minibatch(n: usize, k: usize, rng: &mut LabRng) -> Result<Vec<usize>> {
    let mut sampler = MinibatchSampler::new(n, k)?;
    let mut batch = sampler.sample(rng).to_vec();
    batch.sort_unstable();
    Ok(batch)
}

/// `(1/|batch|) sum_{i in batch} grad f(w, z_i)` written into `out`.
pub fn batch_gradient(model: &dyn LossModel, w: &[f64], samples: &[Sample], batch: &[usize], out: &mut [f64]) {
    let mut g = vec![0.0; w.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for &i in batch {
        model.grad_into(w, &samples[i], &mut g);
        axpy(1.0, &g, out);
    }
    let inv = 1.0 / batch.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Full-batch gradient `grad F_S(w)`.
pub fn full_gradient(model: &dyn LossModel, w: &[f64], samples: &[Sample], out: &mut [f64]) {
    let mut g = vec![0.0; w.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for z in samples {
        model.grad_into(w, z, &mut g);
        axpy(1.0, &g, out);
    }
    let inv = 1.0 / samples.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Empirical risk `F_S(w)`.
pub fn empirical_risk(model: &dyn LossModel, w: &[f64], samples: &[Sample]) -> f64 {
    samples.iter().map(|z| model.eval(w, z)).sum::<f64>() / samples.len() as f64
}

/// Deterministic part of the update given the gradient and the noise draw.
pub fn sgld_update(w: &[f64], grad: &[f64], eta: f64, beta: f64, xi: &[f64]) -> Vec<f64> {
    let scale = (2.0 * eta / beta).sqrt();
    w.iter()
        .zip(grad)
        .zip(xi)
        .map(|((wi, gi), xii)| wi - eta * gi + scale * xii)
        .collect()
}

/// One SGLD step on the mini-batch `batch`; consumes exactly `d` normals.
pub fn sgld_step(
    w: &[f64],
    model: &dyn LossModel,
    dataset: &Dataset,
    batch: &[usize],
    eta: f64,
    beta: f64,
    noise: &mut NormalSource,
) -> Result<Vec<f64>> {
    check_dim(model.dim(), w.len())?;
    if batch.is_empty() {
        return Err(LabError::invalid("batch", "must be nonempty"));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= dataset.len()) {
        return Err(LabError::invalid("batch", format!("index {bad} out of range")));
    }
    let mut g = vec![0.0; w.len()];
    batch_gradient(model, w, &dataset.samples, batch, &mut g);
    let mut xi = vec![0.0; w.len()];
    noise.fill(&mut xi);
    Ok(sgld_update(w, &g, eta, beta, &xi))
}

fn check_dataset(config: &SgldConfig, model: &dyn LossModel, dataset: &Dataset) -> Result<()> {
    check_dim(config.dim, model.dim())?;
    if dataset.len() != config.n {
        return Err(LabError::invalid(
            "dataset",
            format!("has {} points, config says n = {}", dataset.len(), config.n),
        ));
    }
    let radius = model.constants().data_radius;
    for z in &dataset.samples {
        check_dim(config.dim, z.x.len())?;
        if norm(&z.x) > radius * (1.0 + 1e-12) {
            return Err(LabError::invalid("dataset", "point outside the data ball"));
        }
    }
    Ok(())
}

fn refuse_if_strict(config: &SgldConfig, model: &dyn LossModel) -> Result<()> {
    if config.strict_mode {
        let failures = config.precondition_failures(model.constants())?;
        if !failures.is_empty() {
            let listed: Vec<String> = failures.iter().map(ToString::to_string).collect();
            return Err(LabError::Precondition(format!(
                "strict mode refused the run: {}",
                listed.join("; ")
            )));
        }
    }
    Ok(())
}

/// Runs chain number `chain_index`; its streams depend only on
/// `(config.seed, chain_index)`.
pub fn run_chain_indexed(
    config: &SgldConfig,
    model: &dyn LossModel,
    dataset: &Dataset,
    chain_index: u64,
) -> Result<ChainTrace> {
    config.validate()?;
    check_dataset(config, model, dataset)?;
    refuse_if_strict(config, model)?;
    Ok(run_unchecked(config, model, dataset, chain_index))
}

/// Runs one chain with chain index 0.
pub fn run_chain(config: &SgldConfig, model: &dyn LossModel, dataset: &Dataset) -> Result<ChainTrace> {
    run_chain_indexed(config, model, dataset, 0)
}

fn run_unchecked(config: &SgldConfig, model: &dyn LossModel, dataset: &Dataset, chain_index: u64) -> ChainTrace {
    let d = config.dim;
    let samples = &dataset.samples;
    let mut init = NormalSource::new(substream(config.seed, chain_index, Role::Init));
    let mut noise = NormalSource::new(substream(config.seed, chain_index, Role::Noise));
    let mut batch_rng = substream(config.seed, chain_index, Role::Batch);
    let mut batches = MinibatchSampler::new(config.n, config.batch_size).expect("validated");
    let stride = config.stride();

    let mut w = sample_initial(d, config.init_var, &mut init).expect("validated");
    let mut state_steps = vec![0];
    let mut states = vec![w.clone()];
    let mut records = Vec::with_capacity(config.steps + 1);
    let mut g_batch = vec![0.0; d];
    let mut g_full = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let scale = (2.0 * config.eta / config.beta).sqrt();

    for t in 0..=config.steps {
        let batch = batches.sample(&mut batch_rng);
        batch_gradient(model, &w, samples, batch, &mut g_batch);
        let full = batches.is_full();
        if !full {
            full_gradient(model, &w, samples, &mut g_full);
        }
        let g_full_ref = if full { &g_batch } else { &g_full };
        records.push(StepRecord {
            t,
            w_norm_sq: norm_sq(&w),
            grad_minibatch_norm: norm(&g_batch),
            grad_fullbatch_norm: norm(g_full_ref),
            grad_var_sample: if full { 0.0 } else { dist_sq(&g_batch, g_full_ref) },
        });
        if t == config.steps {
            break;
        }
        noise.fill(&mut xi);
        for ((wi, gi), xii) in w.iter_mut().zip(&g_batch).zip(&xi) {
            *wi = *wi - config.eta * gi + scale * xii;
        }
        let step = t + 1;
        if step % stride == 0 || step == config.steps {
            state_steps.push(step);
            states.push(w.clone());
        }
    }

    ChainTrace {
        seed: config.seed,
        chain_index,
        dataset_id: dataset.id,
        stride,
        state_steps,
        states,
        records,
        noise_draws: noise.drawn(),
    }
}

/// Chains grouped by the dataset they were trained on.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub datasets: Vec<Dataset>,
    /// `traces[j * n_chains + c]` is chain `c` on dataset `j`.
    pub traces: Vec<ChainTrace>,
    pub n_chains: usize,
}

impl Ensemble {
    pub fn dataset_of(&self, trace: &ChainTrace) -> &Dataset {
        &self.datasets[trace.dataset_id as usize]
    }
}

/// `n_datasets` datasets drawn from `mu`, each trained by `n_chains` chains.
///
/// Dataset `j` uses data stream `j`; chain `c` on it uses chain index
/// `j * n_chains + c`. Output order never depends on scheduling.
pub fn run_ensemble(
    config: &SgldConfig,
    model: &dyn LossModel,
    mu: &dyn DataDistribution,
    n_chains: usize,
    n_datasets: usize,
) -> Result<Ensemble> {
    if n_chains == 0 || n_datasets == 0 {
        return Err(LabError::invalid("n_chains", "chain and dataset counts must be at least 1"));
    }
    config.validate()?;
    refuse_if_strict(config, model)?;
    let datasets: Vec<Dataset> = (0..n_datasets as u64)
        .map(|j| draw_dataset(mu, config.n, config.seed, j))
        .collect();
    for ds in &datasets {
        check_dataset(config, model, ds)?;
    }
    let traces = (0..(n_chains * n_datasets) as u64)
        .into_par_iter()
        .map(|idx| {
            let ds = &datasets[idx as usize / n_chains];
            run_unchecked(config, model, ds, idx)
        })
        .collect();
    Ok(Ensemble {
        datasets,
        traces,
        n_chains,
    })
}
