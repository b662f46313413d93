use std::path::Path;

use anyhow::{bail, Result};
use sgld_core::bounds::{build_report, ReportInputs};
use sgld_core::oracle::oracle_mi_upper;

use super::run::TRACE_HEADER;
use super::Outcome;
use crate::config::Family;
use crate::context::{ManifestWriter, RunContext, RunStatus};
use crate::table::Table;

/// Evaluates every bound at each configured horizon from the traces written
/// by `run` (found in `trace_dir`, default the output directory).
pub fn cmd_bounds(ctx: &RunContext, trace_dir: Option<&Path>) -> Result<Outcome> {
    let cfg = &ctx.config;
    let model = cfg.model()?;
    let lc = *model.constants();
    let dir = trace_dir.unwrap_or(&ctx.out);

    let trace = Table::read(&dir.join(ctx.artifact("trace", "csv")))?;
    trace.expect_header(TRACE_HEADER)?;
    let variance = trace.floats("grad_var_sample")?;
    if variance.len() != cfg.sgld.steps + 1 {
        bail!("trace has {} rows, config expects {}", variance.len(), cfg.sgld.steps + 1);
    }

    let estimates_path = dir.join(ctx.artifact("estimates", "csv"));
    let grad_diff = if estimates_path.exists() {
        let est = Table::read(&estimates_path)?;
        est.expect_header("estimator,t_or_lambda,mean,stderr,n")?;
        let (name, x, mean) = (est.column("estimator")?, est.column("t_or_lambda")?, est.column("mean")?);
        let mut steps = Vec::new();
        let mut values = Vec::new();
        for r in est.rows.iter().filter(|r| r[name] == "grad_stability") {
            steps.push(r[x].parse::<f64>()? as usize);
            values.push(r[mean].parse::<f64>()?);
        }
        (!steps.is_empty()).then_some((steps, values))
    } else {
        None
    };

    let mut mw = ManifestWriter::begin(ctx, "bounds")?;
    if grad_diff.is_none() {
        mw.note("no gradient-stability estimates found; strongly_convex bound unavailable");
    }
    let sigma_g_sq = cfg.sigma_g_sq(model.as_ref());
    let full_batch = cfg.sgld.batch_size == cfg.sgld.n;
    let exact_mi = cfg.loss.family == Family::Quadratic && full_batch && cfg.bounds.mi_pairs >= 2;
    if !exact_mi {
        mw.note("exact mutual information needs the quadratic loss with full batches; xu_raginsky unavailable");
    }
    let mu = cfg.distribution()?;

    let mut reports = Vec::new();
    for steps in cfg.horizons() {
        let mi_upper = if exact_mi {
            let mut c = cfg.sgld.clone();
            c.steps = steps;
            let r = lc.strong_convexity.expect("quadratic loss is strongly convex");
            Some(mw.time(&format!("mi_upper_T{steps}"), || oracle_mi_upper(&mu, &c, r, cfg.bounds.mi_pairs))?.mean)
        } else {
            None
        };
        let inputs = ReportInputs {
            steps,
            sigma_g_sq,
            variance_trace: Some(variance.clone()),
            grad_diff_trace: grad_diff.clone(),
            mi_upper,
            farghly: cfg.bounds.farghly.map(|[a, b]| (a, b)),
        };
        reports.push(build_report(model.name(), &lc, &cfg.sgld, &cfg.bounds.options, &inputs));
    }

    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = r.to_csv();
        csv.push_str(if i == 0 { &text } else { text.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    mw.write(&ctx.artifact("bounds", "csv"), &csv)?;
    if cfg.output.json {
        mw.write(&ctx.artifact("bounds", "json"), &serde_json::to_string_pretty(&reports)?)?;
    }
    print!("{csv}");
    mw.finish(RunStatus::Complete)?;
    Ok(Outcome::Success)
}
