//! Experiment configuration, read from TOML with a strict schema.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sgld_core::bounds::BoundOptions;
use sgld_core::data::{Labels, UniformBall};
use sgld_core::estimators::EvalLoss;
use sgld_core::fokker_planck::FpSuiteConfig;
use sgld_core::loss::ClaimedConstants;
use sgld_core::{CosineRidgeLoss, LogisticRidgeLoss, LossModel, QuadraticLoss, SgldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    Logistic,
    Cosine,
}

/// Constant overrides replacing the derived ones; used to exercise the certifier.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimedOverrides {
    pub smoothness: Option<f64>,
    pub dissipativity: Option<f64>,
    pub dissipativity_offset: Option<f64>,
    pub origin_bound: Option<f64>,
}

impl ClaimedOverrides {
    fn is_empty(&self) -> bool {
        self == &Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBlock {
    pub family: Family,
    /// Quadratic curvature `R`.
    #[serde(default)]
    pub r: Option<f64>,
    /// Ridge weight for the logistic and cosine families.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Cosine amplitude.
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "ClaimedOverrides::is_empty")]
    pub claimed: ClaimedOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub radius: f64,
    #[serde(default)]
    pub labels: Labels,
    pub test_pool_factor: usize,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            radius: 1.0,
            labels: Labels::None,
            test_pool_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyBlock {
    pub n_samples: usize,
}

impl Default for CertifyBlock {
    fn default() -> Self {
        Self { n_samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub n_chains: usize,
    pub n_datasets: usize,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            n_chains: 8,
            n_datasets: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsBlock {
    /// Horizons `T` at which bounds are evaluated; empty means `sgld.steps`.
    pub horizons: Vec<usize>,
    /// Overrides the sub-Gaussian proxy implied by the evaluation loss.
    pub sigma_g_sq: Option<f64>,
    pub eval: EvalLoss,
    /// `[C1, C2]` of the comparison-only bound shape.
    pub farghly: Option<[f64; 2]>,
    /// Dataset pairs for the exact mutual-information estimate (quadratic only).
    pub mi_pairs: usize,
    pub options: BoundOptions,
}

impl Default for BoundsBlock {
    fn default() -> Self {
        Self {
            horizons: Vec::new(),
            sigma_g_sq: None,
            eval: EvalLoss::Surrogate { scale: 1.0 },
            farghly: None,
            mi_pairs: 200,
            options: BoundOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorsBlock {
    /// Independent trials of the generalization gap; 0 disables it.
    pub gap_trials: usize,
    /// Dataset pairs of the gradient-stability trace; 0 disables it.
    pub stability_pairs: usize,
    /// Independent `(W_T, Z)` draws for the sub-exponential suite.
    pub subexp_samples: usize,
    /// Grid for the log-MGF check; empty means 11 points across `±1/(2 nu)`.
    pub lambda_grid: Vec<f64>,
    pub p_list: Vec<u32>,
}

impl Default for EstimatorsBlock {
    fn default() -> Self {
        Self {
            gap_trials: 200,
            stability_pairs: 50,
            subexp_samples: 2000,
            lambda_grid: Vec::new(),
            p_list: (2..=12).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    pub chains: usize,
    pub check_times: Vec<usize>,
    pub kl_steps: usize,
    /// Replace the recursion constants by contraction 1 and zero increment.
    pub falsify: bool,
}

impl Default for OracleBlock {
    fn default() -> Self {
        Self {
            chains: 500,
            check_times: vec![10, 100, 1000, 5000],
            kl_steps: 10_000,
            falsify: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Fp,
    Subexp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub suites: Vec<Suite>,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            suites: vec![Suite::Oracle, Suite::Fp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: String,
    /// Also write JSON mirrors of reports.
    pub json: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            json: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossBlock,
    pub sgld: SgldConfig,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default)]
    pub certify: CertifyBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub bounds: BoundsBlock,
    #[serde(default)]
    pub estimators: EstimatorsBlock,
    #[serde(default)]
    pub oracle: OracleBlock,
    #[serde(default)]
    pub fp: FpSuiteConfig,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sgld.validate()?;
        self.model()?;
        self.distribution()?;
        if self.data.test_pool_factor == 0 {
            bail!("data.test_pool_factor must be at least 1");
        }
        if self.run.n_chains == 0 || self.run.n_datasets == 0 {
            bail!("run.n_chains and run.n_datasets must be at least 1");
        }
        Ok(())
    }

    /// The configured loss in dimension `sgld.dim`.
    pub fn model(&self) -> Result<Box<dyn LossModel>> {
        self.model_in_dim(self.sgld.dim)
    }

    pub fn model_in_dim(&self, d: usize) -> Result<Box<dyn LossModel>> {
        let l = &self.loss;
        let radius = self.data.radius;
        let base: Box<dyn LossModel> = match l.family {
            Family::Quadratic => Box::new(QuadraticLoss::new(l.r.unwrap_or(1.0), radius, d)?),
            Family::Logistic => Box::new(LogisticRidgeLoss::new(l.lambda.unwrap_or(1.0), radius, d)?),
            Family::Cosine => Box::new(CosineRidgeLoss::new(
                l.lambda.unwrap_or(1.0),
                l.amplitude.unwrap_or(0.5),
                radius,
                d,
            )?),
        };
        let unused = match l.family {
            Family::Quadratic => l.lambda.is_some() || l.amplitude.is_some(),
            Family::Logistic => l.r.is_some() || l.amplitude.is_some(),
            Family::Cosine => l.r.is_some(),
        };
        if unused {
            bail!("loss parameters do not match family {:?}", l.family);
        }
        if l.claimed.is_empty() {
            return Ok(base);
        }
        let mut c = *base.constants();
        let o = &l.claimed;
        c.smoothness = o.smoothness.unwrap_or(c.smoothness);
        c.dissipativity = o.dissipativity.unwrap_or(c.dissipativity);
        c.dissipativity_offset = o.dissipativity_offset.unwrap_or(c.dissipativity_offset);
        c.origin_bound = o.origin_bound.unwrap_or(c.origin_bound);
        if c.strong_convexity.is_some_and(|r| r > c.smoothness) {
            c.strong_convexity = None;
        }
        Ok(Box::new(ClaimedConstants::new(base, c)))
    }

    pub fn distribution(&self) -> Result<UniformBall> {
        self.distribution_in_dim(self.sgld.dim)
    }

    pub fn distribution_in_dim(&self, d: usize) -> Result<UniformBall> {
        Ok(UniformBall::new(d, self.data.radius, self.data.labels)?)
    }

    pub fn horizons(&self) -> Vec<usize> {
        if self.bounds.horizons.is_empty() {
            vec![self.sgld.steps]
        } else {
            self.bounds.horizons.clone()
        }
    }

    /// Sub-Gaussian proxy used by the bounds.
    pub fn sigma_g_sq(&self, model: &dyn LossModel) -> Option<f64> {
        self.bounds.sigma_g_sq.or_else(|| self.bounds.eval.sigma_g_sq(model.constants()))
    }
}
