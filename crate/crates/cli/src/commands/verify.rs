use anyhow::Result;
use serde::Serialize;
use sgld_core::bounds::{kl_recursion_constants, subexp_params, DerivedConstants};
use sgld_core::data::draw_dataset;
use sgld_core::estimators::{logmgf_check, pth_moment_check, subexp_samples};
use sgld_core::fokker_planck::{fp_suite, FpResolutionReport};
use sgld_core::oracle::{
    check_ensemble, kl_trace, oracle_trace, strongly_convex_recursion, trace_csv, verify_kl_recursion,
    KlRecursionCheck,
};
use sgld_core::run_ensemble;
use sgld_core::vecops::dist_sq;

use super::Outcome;
use crate::config::{Family, Suite};
use crate::context::{ManifestWriter, RunContext, RunStatus};

#[derive(Debug, Serialize)]
struct RecursionVerdict {
    constants: &'static str,
    /// Hard verdicts decide the exit code; heuristic ones are reported only.
    hard: bool,
    contraction: f64,
    per_step_add: f64,
    check: Option<KlRecursionCheck>,
    note: Option<String>,
}

#[derive(Debug, Default, Serialize)]
struct VerifySummary {
    hard_violations: usize,
    suites: Vec<String>,
    notes: Vec<String>,
    ensemble_checks: usize,
    ensemble_outside: usize,
    recursion: Vec<RecursionVerdict>,
    fp: Option<[FpSummaryRow; 2]>,
    logmgf_violations: Option<usize>,
    pth_max_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct FpSummaryRow {
    n_cells: usize,
    h: f64,
    dt: f64,
    steps: usize,
    max_mass_drift: f64,
    clamped_mass: f64,
    gibbs_max_dev: f64,
    h_theorem_max_increase: f64,
    violations: usize,
    violation_rate: f64,
    omega_final: f64,
    passed: bool,
}

impl From<&FpResolutionReport> for FpSummaryRow {
    fn from(r: &FpResolutionReport) -> Self {
        Self {
            n_cells: r.grid.n_cells,
            h: r.grid.h(),
            dt: r.dt,
            steps: r.steps,
            max_mass_drift: r.max_mass_drift,
            clamped_mass: r.clamped_mass,
            gibbs_max_dev: r.gibbs_max_dev,
            h_theorem_max_increase: r.h_theorem_max_increase,
            violations: r.violations,
            violation_rate: r.violation_rate,
            omega_final: r.omega_final,
            passed: r.passed(),
        }
    }
}

/// Runs the configured verification suites; exit 0 iff no hard violations.
pub fn cmd_verify(ctx: &RunContext) -> Result<Outcome> {
    let cfg = &ctx.config;
    let mut mw = ManifestWriter::begin(ctx, "verify")?;
    let mut summary = VerifySummary::default();
    for suite in &cfg.verify.suites {
        match suite {
            Suite::Oracle => oracle_suite(ctx, &mut mw, &mut summary)?,
            Suite::Fp => fp_suite_cmd(ctx, &mut mw, &mut summary)?,
            Suite::Subexp => subexp_suite(ctx, &mut mw, &mut summary)?,
        }
    }
    if cfg.output.json {
        mw.write(&ctx.artifact("verify", "json"), &serde_json::to_string_pretty(&summary)?)?;
    }
    println!(
        "verify: {} hard violations across {:?}",
        summary.hard_violations, summary.suites
    );
    for n in &summary.notes {
        println!("note: {n}");
    }
    let outcome = Outcome::from_ok(summary.hard_violations == 0);
    mw.finish(if outcome == Outcome::Success {
        RunStatus::Complete
    } else {
        RunStatus::Violations
    })?;
    Ok(outcome)
}

/// Full-batch quadratic chains against the exact Gaussian law, and the
/// strongly convex KL recursion on the exact KL trace.
fn oracle_suite(ctx: &RunContext, mw: &mut ManifestWriter, summary: &mut VerifySummary) -> Result<()> {
    let cfg = &ctx.config;
    if cfg.loss.family != Family::Quadratic {
        summary.notes.push("oracle suite skipped: loss is not quadratic".into());
        return Ok(());
    }
    summary.suites.push("oracle".into());
    let model = cfg.model()?;
    let mu = cfg.distribution()?;
    let r = model.constants().strong_convexity.expect("quadratic loss is strongly convex");
    let o = &cfg.oracle;

    let mut sgld = cfg.sgld.clone();
    sgld.seed = ctx.seed;
    sgld.batch_size = sgld.n;
    sgld.strict_mode = false;
    sgld.steps = o.check_times.iter().copied().max().unwrap_or(0);
    let ens = mw.time("oracle_ensemble", || run_ensemble(&sgld, model.as_ref(), &mu, o.chains, 1))?;
    let zbar = ens.datasets[0].feature_mean();
    let rows = check_ensemble(&ens.traces, &sgld, r, &zbar, &o.check_times, 3.0)?;
    let mut csv = String::from("t,coord,stat,estimate,stderr,exact,within\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.t, row.coord, row.stat, row.estimate.mean, row.estimate.stderr, row.exact, row.within
        ));
    }
    mw.write(&ctx.artifact("oracle_ensemble", "csv"), &csv)?;
    summary.ensemble_checks = rows.len();
    summary.ensemble_outside = rows.iter().filter(|r| !r.within).count();
    summary.hard_violations += summary.ensemble_outside;

    let s_prime = draw_dataset(&mu, sgld.n, sgld.seed, 1);
    let zbar_prime = s_prime.feature_mean();
    let (eta, beta) = (sgld.eta, sgld.beta);
    let kl = kl_trace(&zbar, &zbar_prime, sgld.init_var, eta, beta, r, o.kl_steps)?;
    let states = oracle_trace(zbar.len(), sgld.init_var, eta, beta, r, &zbar, o.kl_steps);
    mw.write(&ctx.artifact("oracle_kl", "csv"), &trace_csv(&states, &kl))?;

    // grad F_S - grad F_S' = R (zbar_S' - zbar_S) at every w
    let stability = r * r * dist_sq(&zbar, &zbar_prime);
    let (contraction, add) = if o.falsify {
        summary.notes.push("falsification control: contraction 1, increment 0".into());
        (1.0, 0.0)
    } else {
        strongly_convex_recursion(eta, beta, r, stability)
    };
    let check = verify_kl_recursion(&kl, contraction, add);
    summary.hard_violations += check.violations;
    summary.recursion.push(RecursionVerdict {
        constants: "strongly_convex",
        hard: true,
        contraction,
        per_step_add: add,
        check: Some(check),
        note: None,
    });

    let general = DerivedConstants::compute(model.constants(), &sgld, &cfg.bounds.options)
        .and_then(|dc| kl_recursion_constants(&dc, eta, beta));
    summary.recursion.push(match general {
        Ok(k) => RecursionVerdict {
            constants: "general_heuristic",
            hard: false,
            contraction: k.contraction,
            per_step_add: k.per_step_add,
            check: Some(verify_kl_recursion(&kl, k.contraction, k.per_step_add)),
            note: None,
        },
        Err(e) => RecursionVerdict {
            constants: "general_heuristic",
            hard: false,
            contraction: f64::NAN,
            per_step_add: f64::NAN,
            check: None,
            note: Some(e.to_string()),
        },
    });

    let mut csv = String::from("constants,hard,contraction,per_step_add,steps_checked,violations,worst_slack\n");
    for v in &summary.recursion {
        match &v.check {
            Some(c) => csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                v.constants, v.hard, v.contraction, v.per_step_add, c.steps_checked, c.violations, c.worst_slack
            )),
            None => csv.push_str(&format!("{},{},,,,,\n", v.constants, v.hard)),
        }
    }
    mw.write(&ctx.artifact("oracle_recursion", "csv"), &csv)?;
    Ok(())
}

/// Paired Fokker-Planck evolution for the loss in one dimension.
fn fp_suite_cmd(ctx: &RunContext, mw: &mut ManifestWriter, summary: &mut VerifySummary) -> Result<()> {
    let cfg = &ctx.config;
    summary.suites.push("fp".into());
    let model = cfg.model_in_dim(1)?;
    let mu = cfg.distribution_in_dim(1)?;
    let s = draw_dataset(&mu, cfg.sgld.n, ctx.seed, 0);
    let s_prime = draw_dataset(&mu, cfg.sgld.n, ctx.seed, 1);
    let report = mw.time("fp_suite", || fp_suite(model.as_ref(), &s, &s_prime, cfg.sgld.beta, &cfg.fp))?;
    mw.write(&ctx.artifact("fp_coarse", "csv"), &report.coarse.kl_check.to_csv())?;
    mw.write(&ctx.artifact("fp_fine", "csv"), &report.fine.kl_check.to_csv())?;

    let rows = [FpSummaryRow::from(&report.coarse), FpSummaryRow::from(&report.fine)];
    let mut csv = String::from(
        "n_cells,h,dt,steps,max_mass_drift,clamped_mass,gibbs_max_dev,h_theorem_max_increase,violations,violation_rate,omega_final,passed\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n_cells,
            r.h,
            r.dt,
            r.steps,
            r.max_mass_drift,
            r.clamped_mass,
            r.gibbs_max_dev,
            r.h_theorem_max_increase,
            r.violations,
            r.violation_rate,
            r.omega_final,
            r.passed
        ));
    }
    mw.write(&ctx.artifact("fp_summary", "csv"), &csv)?;
    if !report.passed() {
        summary.hard_violations += 1;
        if !report.refinement_ok {
            summary.notes.push("fp: violation rate did not decrease under refinement".into());
        }
    }
    summary.fp = Some(rows);
    Ok(())
}

/// Log-MGF envelope and p-th moment growth of `f(W_T, Z)`.
fn subexp_suite(ctx: &RunContext, mw: &mut ManifestWriter, summary: &mut VerifySummary) -> Result<()> {
    let cfg = &ctx.config;
    summary.suites.push("subexp".into());
    let model = cfg.model()?;
    let mu = cfg.distribution()?;
    let lc = *model.constants();
    let mut sgld = cfg.sgld.clone();
    sgld.seed = ctx.seed;
    if ctx.allow_unsafe {
        sgld.strict_mode = false;
    }
    let (beta, d, s_sq) = (sgld.beta, sgld.dim, sgld.init_var);
    let params = subexp_params(&lc, beta, d, s_sq, cfg.bounds.options.moment_universal_c)?;
    let (values, states) = mw.time("subexp_samples", || {
        subexp_samples(model.as_ref(), &mu, &sgld, cfg.estimators.subexp_samples)
    })?;

    let grid = if cfg.estimators.lambda_grid.is_empty() {
        let limit = 1.0 / (2.0 * params.nu);
        (0..=10).map(|i| limit * (i as f64 / 5.0 - 1.0)).collect()
    } else {
        cfg.estimators.lambda_grid.clone()
    };
    let mgf = logmgf_check(&values, params.sigma_e_sq, params.nu, &grid, ctx.seed)?;
    let mut csv = String::from("lambda,log_mgf,band_lo,band_hi,envelope,violated\n");
    for r in &mgf.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.lambda, r.log_mgf, r.band_lo, r.band_hi, r.envelope, r.violated
        ));
    }
    mw.write(&ctx.artifact("subexp_logmgf", "csv"), &csv)?;

    let pth = pth_moment_check(&states, &cfg.estimators.p_list, &lc, beta, d, s_sq)?;
    let mut csv = String::from("p,moment,stderr,root,init_root,fitted_c\n");
    for r in &pth.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.p, r.moment.mean, r.moment.stderr, r.root, r.init_root, r.fitted_c
        ));
    }
    mw.write(&ctx.artifact("subexp_moments", "csv"), &csv)?;

    summary.hard_violations += mgf.violations + usize::from(!pth.bounded);
    summary.logmgf_violations = Some(mgf.violations);
    summary.pth_max_ratio = Some(pth.max_ratio);
    Ok(())
}
