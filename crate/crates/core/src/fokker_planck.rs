//! One-dimensional finite-volume Fokker-Planck solver for
//! `d rho / dt = d/dw (beta^{-1} d rho/dw + rho F'(w))`.
//!
//! Face fluxes use Scharfetter-Gummel (exponentially fitted Chang-Cooper)
//! weights, so `exp(-beta F)` sampled at cell centers is an exact discrete
//! fixed point. Under the step limit the update is a stochastic matrix:
//! mass is conserved, densities stay nonnegative and `KL(rho | pi)` never
//! increases.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_positive, LabError, Result};
use crate::loss::LossModel;

pub const MIN_CELLS: usize = 64;
const ABS_FLOOR: f64 = 1e-300;
const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub w_min: f64,
    pub w_max: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(w_min: f64, w_max: f64, n_cells: usize) -> Result<Self> {
        if !(w_min.is_finite() && w_max.is_finite() && w_max > w_min) {
            return Err(LabError::invalid("w_max", "need finite bounds with w_max > w_min"));
        }
        if n_cells < MIN_CELLS {
            return Err(LabError::invalid("n_cells", format!("need at least {MIN_CELLS}, got {n_cells}")));
        }
        Ok(Self { w_min, w_max, n_cells })
    }

    pub fn symmetric(center: f64, half_width: f64, n_cells: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, n_cells)
    }

    pub fn h(&self) -> f64 {
        (self.w_max - self.w_min) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.w_min + (i as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }
}

/// `8 / sqrt(beta m)`: beyond this radius dissipativity leaves only an
/// exponentially small mass.
pub fn confinement_half_width(beta: f64, m: f64) -> f64 {
    8.0 / (beta * m).sqrt()
}

/// Potential values and derivatives at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl Potential {
    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let c = grid.centers();
        Self {
            values: c.iter().map(|&w| f(w)).collect(),
            derivs: c.iter().map(|&w| df(w)).collect(),
        }
    }

    pub fn zero(grid: &Grid1D) -> Self {
        Self::from_fn(grid, |_| 0.0, |_| 0.0)
    }

    /// Empirical risk `F_S` of a one-dimensional loss.
    pub fn from_loss(grid: &Grid1D, model: &dyn LossModel, dataset: &Dataset) -> Result<Self> {
        crate::loss::check_dim(1, model.dim())?;
        if dataset.is_empty() {
            return Err(LabError::EmptySupport("dataset is empty".into()));
        }
        let inv = 1.0 / dataset.len() as f64;
        let mut values = Vec::with_capacity(grid.n_cells);
        let mut derivs = Vec::with_capacity(grid.n_cells);
        let mut g = [0.0];
        for w in grid.centers() {
            let (mut f, mut df) = (0.0, 0.0);
            for z in &dataset.samples {
                f += model.eval(&[w], z);
                model.grad_into(&[w], z, &mut g);
                df += g[0];
            }
            values.push(f * inv);
            derivs.push(df * inv);
        }
        Ok(Self { values, derivs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub t: f64,
    /// Mass removed by clamping negative values, accumulated over the run.
    pub clamped_mass: f64,
}

impl DensityField {
    /// Samples `f` at cell centers and normalizes to unit mass.
    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.centers().into_iter().map(f).collect();
        normalized(grid, values)
    }

    pub fn gaussian(grid: &Grid1D, mean: f64, var: f64) -> Result<Self> {
        ensure_positive("var", var)?;
        Self::from_fn(grid, |w| (-(w - mean).powi(2) / (2.0 * var)).exp())
    }

    pub fn mass(&self, grid: &Grid1D) -> f64 {
        self.values.iter().sum::<f64>() * grid.h()
    }

    pub fn mean(&self, grid: &Grid1D) -> f64 {
        let h = grid.h();
        self.values.iter().enumerate().map(|(i, v)| v * grid.center(i) * h).sum()
    }

    pub fn variance(&self, grid: &Grid1D) -> f64 {
        let h = grid.h();
        let m = self.mean(grid);
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (grid.center(i) - m).powi(2) * h)
            .sum()
    }
}

fn normalized(grid: &Grid1D, values: Vec<f64>) -> Result<DensityField> {
    if values.len() != grid.n_cells {
        return Err(LabError::DimensionMismatch {
            expected: grid.n_cells,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(LabError::invalid("density", "values must be finite and nonnegative"));
    }
    let mass = values.iter().sum::<f64>() * grid.h();
    if mass <= 0.0 {
        return Err(LabError::EmptySupport("density has zero mass".into()));
    }
    Ok(DensityField {
        values: values.into_iter().map(|v| v / mass).collect(),
        t: 0.0,
        clamped_mass: 0.0,
    })
}

/// Normalized `exp(-beta F)` on the grid.
pub fn gibbs_density(grid: &Grid1D, potential: &Potential, beta: f64) -> Result<DensityField> {
    ensure_positive("beta", beta)?;
    check_len(grid, &potential.values)?;
    if potential.values.iter().any(|f| !f.is_finite()) {
        return Err(LabError::invalid("potential", "must be finite on the grid"));
    }
    let f_min = potential.values.iter().copied().fold(f64::INFINITY, f64::min);
    normalized(grid, potential.values.iter().map(|f| (-beta * (f - f_min)).exp()).collect())
}

fn check_len(grid: &Grid1D, v: &[f64]) -> Result<()> {
    if v.len() == grid.n_cells {
        Ok(())
    } else {
        Err(LabError::DimensionMismatch {
            expected: grid.n_cells,
            got: v.len(),
        })
    }
}

/// Bernoulli function `x / (e^x - 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// `beta (F_{i+1} - F_i)` at each interior face.
fn face_jumps(potential: &Potential, beta: f64) -> Vec<f64> {
    potential.values.windows(2).map(|w| beta * (w[1] - w[0])).collect()
}

/// Largest `dt` keeping every diagonal entry of the update nonnegative.
pub fn fp_max_dt(grid: &Grid1D, potential: &Potential, beta: f64) -> f64 {
    let x = face_jumps(potential, beta);
    let n = grid.n_cells;
    let h = grid.h();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let out_right = if i + 1 < n { bernoulli(x[i]) } else { 0.0 };
        let out_left = if i > 0 { bernoulli(-x[i - 1]) } else { 0.0 };
        worst = worst.max(out_right + out_left);
    }
    beta * h * h / worst
}

/// One explicit step with zero-flux boundaries.
pub fn fp_step(grid: &Grid1D, rho: &DensityField, potential: &Potential, beta: f64, dt: f64) -> Result<DensityField> {
    ensure_positive("beta", beta)?;
    ensure_positive("dt", dt)?;
    check_len(grid, &rho.values)?;
    check_len(grid, &potential.values)?;
    let limit = fp_max_dt(grid, potential, beta);
    if dt > limit {
        return Err(LabError::StepTooLarge { dt, suggested: limit });
    }
    Ok(step_unchecked(grid, rho, &face_jumps(potential, beta), beta, dt))
}

fn step_unchecked(grid: &Grid1D, rho: &DensityField, jumps: &[f64], beta: f64, dt: f64) -> DensityField {
    let n = grid.n_cells;
    let h = grid.h();
    let r = &rho.values;
    // rightward flux through face i + 1/2
    let flux: Vec<f64> = (0..n - 1)
        .map(|i| (bernoulli(jumps[i]) * r[i] - bernoulli(-jumps[i]) * r[i + 1]) / (beta * h))
        .collect();
    let c = dt / h;
    let mut clamped = rho.clamped_mass;
    let values = (0..n)
        .map(|i| {
            let right = if i + 1 < n { flux[i] } else { 0.0 };
            let left = if i > 0 { flux[i - 1] } else { 0.0 };
            let v = r[i] - c * (right - left);
            if v < 0.0 {
                clamped += -v * h;
                0.0
            } else {
                v
            }
        })
        .collect();
    DensityField {
        values,
        t: rho.t + dt,
        clamped_mass: clamped,
    }
}

/// Cells where both densities clear the absolute and relative floors.
fn support_mask(rho: &[f64], gamma: &[f64]) -> Vec<bool> {
    let max_r = rho.iter().copied().fold(0.0, f64::max);
    let max_g = gamma.iter().copied().fold(0.0, f64::max);
    rho.iter()
        .zip(gamma)
        .map(|(&r, &g)| r > ABS_FLOOR && g > ABS_FLOOR && r > REL_FLOOR * max_r && g > REL_FLOOR * max_g)
        .collect()
}

/// `sum h rho log(rho / gamma)` over the shared support.
pub fn kl_on_grid(grid: &Grid1D, rho: &DensityField, gamma: &DensityField) -> Result<f64> {
    check_len(grid, &rho.values)?;
    check_len(grid, &gamma.values)?;
    let mask = support_mask(&rho.values, &gamma.values);
    if !mask.iter().any(|&m| m) {
        return Err(LabError::EmptySupport("densities share no support".into()));
    }
    let h = grid.h();
    Ok(rho
        .values
        .iter()
        .zip(&gamma.values)
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|((&r, &g), _)| h * r * (r / g).ln())
        .sum())
}

/// Central-difference `d/dw log v` at interior cells whose neighbours are in
/// the mask.
fn log_slopes(grid: &Grid1D, v: &[f64], mask: &[bool]) -> Vec<Option<f64>> {
    let n = v.len();
    let inv = 1.0 / (2.0 * grid.h());
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n || !(mask[i - 1] && mask[i] && mask[i + 1]) {
                None
            } else {
                Some((v[i + 1].ln() - v[i - 1].ln()) * inv)
            }
        })
        .collect()
}

/// Relative Fisher information `sum h rho (d log rho - d log gamma)^2`.
pub fn fisher_on_grid(grid: &Grid1D, rho: &DensityField, gamma: &DensityField) -> Result<f64> {
    check_len(grid, &rho.values)?;
    check_len(grid, &gamma.values)?;
    let mask = support_mask(&rho.values, &gamma.values);
    let sr = log_slopes(grid, &rho.values, &mask);
    let sg = log_slopes(grid, &gamma.values, &mask);
    let mut any = false;
    let mut total = 0.0;
    for i in 0..grid.n_cells {
        if let (Some(a), Some(b)) = (sr[i], sg[i]) {
            any = true;
            total += grid.h() * rho.values[i] * (a - b).powi(2);
        }
    }
    if any {
        Ok(total)
    } else {
        Err(LabError::EmptySupport("no interior cells in the shared support".into()))
    }
}

/// `E_rho |F_S' - F_S''|^2`.
pub fn stability_term(grid: &Grid1D, rho: &DensityField, pot_s: &Potential, pot_s_prime: &Potential) -> f64 {
    let h = grid.h();
    rho.values
        .iter()
        .zip(pot_s.derivs.iter().zip(&pot_s_prime.derivs))
        .map(|(r, (a, b))| h * r * (a - b).powi(2))
        .sum()
}

/// `Omega = E_rho |d log pi|^2 + 2 E_rho (d log rho)(d log gamma)` with
/// `d log pi = -beta F_S'`.
pub fn omega_on_grid(
    grid: &Grid1D,
    rho: &DensityField,
    gamma: &DensityField,
    pot_s: &Potential,
    beta: f64,
) -> Result<f64> {
    let mask = support_mask(&rho.values, &gamma.values);
    let sr = log_slopes(grid, &rho.values, &mask);
    let sg = log_slopes(grid, &gamma.values, &mask);
    let h = grid.h();
    let mut total = 0.0;
    let mut any = false;
    for i in 0..grid.n_cells {
        if let (Some(a), Some(b)) = (sr[i], sg[i]) {
            any = true;
            total += h * rho.values[i] * ((beta * pot_s.derivs[i]).powi(2) + 2.0 * a * b);
        }
    }
    if any {
        Ok(total)
    } else {
        Err(LabError::EmptySupport("no interior cells in the shared support".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpRecord {
    pub t: f64,
    pub kl: f64,
    pub fisher: f64,
    pub stability: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTrace {
    pub records: Vec<FpRecord>,
    pub dt: f64,
    pub h: f64,
    /// Largest per-step change in total mass of either density.
    pub max_mass_drift: f64,
    pub clamped_mass: f64,
}

/// Evolves `rho` under `F_S` and `gamma` under `F_{S'}` for `steps` steps,
/// recording every step.
#[allow(clippy::too_many_arguments)]
pub fn evolve_pair(
    grid: &Grid1D,
    pot_s: &Potential,
    pot_s_prime: &Potential,
    rho0: &DensityField,
    gamma0: &DensityField,
    beta: f64,
    dt: f64,
    steps: usize,
) -> Result<PairedTrace> {
    ensure_positive("dt", dt)?;
    let limit = fp_max_dt(grid, pot_s, beta).min(fp_max_dt(grid, pot_s_prime, beta));
    if dt > limit {
        return Err(LabError::StepTooLarge { dt, suggested: limit });
    }
    let (js, jsp) = (face_jumps(pot_s, beta), face_jumps(pot_s_prime, beta));
    let mut rho = rho0.clone();
    let mut gamma = gamma0.clone();
    let record = |rho: &DensityField, gamma: &DensityField| -> Result<FpRecord> {
        Ok(FpRecord {
            t: rho.t,
            kl: kl_on_grid(grid, rho, gamma)?,
            fisher: fisher_on_grid(grid, rho, gamma)?,
            stability: stability_term(grid, rho, pot_s, pot_s_prime),
            omega: omega_on_grid(grid, rho, gamma, pot_s, beta)?,
        })
    };
    let mut records = Vec::with_capacity(steps + 1);
    records.push(record(&rho, &gamma)?);
    let mut max_mass_drift: f64 = 0.0;
    for _ in 0..steps {
        let (mr, mg) = (rho.mass(grid), gamma.mass(grid));
        rho = step_unchecked(grid, &rho, &js, beta, dt);
        gamma = step_unchecked(grid, &gamma, &jsp, beta, dt);
        max_mass_drift = max_mass_drift
            .max((rho.mass(grid) - mr).abs())
            .max((gamma.mass(grid) - mg).abs());
        records.push(record(&rho, &gamma)?);
    }
    Ok(PairedTrace {
        records,
        dt,
        h: grid.h(),
        max_mass_drift,
        clamped_mass: rho.clamped_mass + gamma.clamped_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlInequalityRow {
    pub t: f64,
    pub kl: f64,
    pub fisher: f64,
    pub stability_term: f64,
    pub dkl_dt: f64,
    /// `-(1/(2 beta)) fisher + (beta/2) stability - dKL/dt`.
    pub slack: f64,
    pub tolerance: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlInequalityReport {
    pub rows: Vec<KlInequalityRow>,
    pub violations: usize,
    pub violation_rate: f64,
}

impl KlInequalityReport {
    /// CSV `t,kl,fisher,stability_term,dkl_dt,slack`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,kl,fisher,stability_term,dkl_dt,slack\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t, r.kl, r.fisher, r.stability_term, r.dkl_dt, r.slack
            ));
        }
        out
    }
}

/// Checks `dKL/dt <= -(1/(2 beta)) Fisher + (beta/2) E_rho |dF|^2` at every
/// interior record, with `dKL/dt` by centered differences.
///
/// A step counts as a violation when the slack is below
/// `-10 (h^2 + dt)` times the magnitude of the right-hand side terms.
pub fn verify_kl_inequality(trace: &PairedTrace, beta: f64) -> KlInequalityReport {
    let rec = &trace.records;
    let tol_factor = 10.0 * (trace.h * trace.h + trace.dt);
    let rows: Vec<KlInequalityRow> = (1..rec.len().saturating_sub(1))
        .map(|i| {
            let r = rec[i];
            let dkl_dt = (rec[i + 1].kl - rec[i - 1].kl) / (2.0 * trace.dt);
            let dissipation = r.fisher / (2.0 * beta);
            let injection = beta / 2.0 * r.stability;
            let slack = injection - dissipation - dkl_dt;
            let tolerance = tol_factor * (dissipation + injection);
            KlInequalityRow {
                t: r.t,
                kl: r.kl,
                fisher: r.fisher,
                stability_term: r.stability,
                dkl_dt,
                slack,
                tolerance,
                violated: slack < -tolerance,
            }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    KlInequalityReport {
        violation_rate: if rows.is_empty() { 0.0 } else { violations as f64 / rows.len() as f64 },
        violations,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HTheoremReport {
    pub kl: Vec<f64>,
    /// `max_t (KL_t - KL_{t-1})`; nonpositive up to rounding.
    pub max_increase: f64,
}

/// Tracks `KL(rho_t | pi)` under a fixed potential.
pub fn h_theorem(
    grid: &Grid1D,
    potential: &Potential,
    rho0: &DensityField,
    beta: f64,
    dt: f64,
    steps: usize,
) -> Result<HTheoremReport> {
    let pi = gibbs_density(grid, potential, beta)?;
    let mut rho = rho0.clone();
    let mut kl = vec![kl_on_grid(grid, &rho, &pi)?];
    for _ in 0..steps {
        rho = fp_step(grid, &rho, potential, beta, dt)?;
        kl.push(kl_on_grid(grid, &rho, &pi)?);
    }
    let max_increase = kl.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(HTheoremReport { kl, max_increase })
}

/// Identifies a paired run in CSV and manifest output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpRunConfig {
    pub w_min: f64,
    pub w_max: f64,
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub beta: f64,
    pub potential_id: String,
    pub dataset_id: u64,
}

/// Settings for the paired suite run at a base resolution and its halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpSuiteConfig {
    pub n_cells: usize,
    /// Domain half-width; defaults to the confinement width plus the data radius.
    pub half_width: Option<f64>,
    /// Fraction of the stability limit used as `dt`.
    pub dt_fraction: f64,
    pub t_end: f64,
    pub init_var: f64,
}

impl Default for FpSuiteConfig {
    fn default() -> Self {
        Self {
            n_cells: 512,
            half_width: None,
            dt_fraction: 0.5,
            t_end: 4.0,
            init_var: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpResolutionReport {
    pub grid: Grid1D,
    pub dt: f64,
    pub steps: usize,
    pub max_mass_drift: f64,
    pub clamped_mass: f64,
    /// Largest per-cell change of `pi` over one step.
    pub gibbs_max_dev: f64,
    pub h_theorem_max_increase: f64,
    pub violations: usize,
    pub violation_rate: f64,
    pub omega_final: f64,
    pub kl_check: KlInequalityReport,
}

impl FpResolutionReport {
    pub fn passed(&self) -> bool {
        self.max_mass_drift <= 1e-12
            && self.clamped_mass < 1e-10
            && self.gibbs_max_dev <= 1e-8
            && self.h_theorem_max_increase <= 1e-9
            && self.violation_rate <= 0.01
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpSuiteReport {
    pub coarse: FpResolutionReport,
    pub fine: FpResolutionReport,
    pub refinement_ok: bool,
}

impl FpSuiteReport {
    pub fn passed(&self) -> bool {
        self.coarse.passed() && self.fine.passed() && self.refinement_ok
    }
}

/// Runs the paired evolution for `F_S` and `F_{S'}` of a one-dimensional loss
/// at `n_cells` and `2 n_cells`, both densities starting from a centered
/// Gaussian.
pub fn fp_suite(
    model: &dyn LossModel,
    s: &Dataset,
    s_prime: &Dataset,
    beta: f64,
    cfg: &FpSuiteConfig,
) -> Result<FpSuiteReport> {
    ensure_positive("beta", beta)?;
    ensure_positive("t_end", cfg.t_end)?;
    ensure_positive("init_var", cfg.init_var)?;
    if !(cfg.dt_fraction > 0.0 && cfg.dt_fraction <= 1.0) {
        return Err(LabError::invalid("dt_fraction", "must lie in (0, 1]"));
    }
    let lc = model.constants();
    let half = match cfg.half_width {
        Some(w) => w,
        None => confinement_half_width(beta, lc.dissipativity) + lc.data_radius,
    };
    let run = |n_cells: usize| -> Result<FpResolutionReport> {
        let grid = Grid1D::symmetric(0.0, half, n_cells)?;
        let ps = Potential::from_loss(&grid, model, s)?;
        let pp = Potential::from_loss(&grid, model, s_prime)?;
        let dt = cfg.dt_fraction * fp_max_dt(&grid, &ps, beta).min(fp_max_dt(&grid, &pp, beta));
        let steps = (cfg.t_end / dt).ceil() as usize;
        let rho0 = DensityField::gaussian(&grid, 0.0, cfg.init_var)?;
        let trace = evolve_pair(&grid, &ps, &pp, &rho0, &rho0, beta, dt, steps)?;
        let kl_check = verify_kl_inequality(&trace, beta);
        let pi = gibbs_density(&grid, &ps, beta)?;
        let next = fp_step(&grid, &pi, &ps, beta, dt)?;
        let gibbs_max_dev = pi.values.iter().zip(&next.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let h = h_theorem(&grid, &ps, &rho0, beta, dt, steps)?;
        Ok(FpResolutionReport {
            grid,
            dt,
            steps,
            max_mass_drift: trace.max_mass_drift,
            clamped_mass: trace.clamped_mass,
            gibbs_max_dev,
            h_theorem_max_increase: h.max_increase,
            violations: kl_check.violations,
            violation_rate: kl_check.violation_rate,
            omega_final: trace.records.last().map_or(f64::NAN, |r| r.omega),
            kl_check,
        })
    };
    let (coarse, fine) = rayon::join(|| run(cfg.n_cells), || run(2 * cfg.n_cells));
    let (coarse, fine) = (coarse?, fine?);
    Ok(FpSuiteReport {
        refinement_ok: fine.violation_rate <= coarse.violation_rate,
        coarse,
        fine,
    })
}
