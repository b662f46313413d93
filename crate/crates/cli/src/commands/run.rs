use anyhow::Result;
use sgld_core::estimators::{estimates_csv, gen_gap_samples_with_pool, grad_stability_trace};
use sgld_core::{run_ensemble, EstimateWithError};

use super::Outcome;
use crate::context::{ManifestWriter, RunContext, RunStatus};

pub const TRACE_HEADER: &str = "t,w_norm_sq,grad_var_sample,grad_fullbatch_norm,grad_minibatch_norm";

/// Runs the chain ensemble and the configured estimators.
///
/// Writes the per-step means over all chains, the final states and the
/// estimates. Configurations outside the theorem range are refused unless
/// `--allow-unsafe` is given.
pub fn cmd_run(ctx: &RunContext) -> Result<Outcome> {
    let cfg = &ctx.config;
    let model = cfg.model()?;
    let mu = cfg.distribution()?;
    let mut mw = ManifestWriter::begin(ctx, "run")?;

    let failures = cfg.sgld.precondition_failures(model.constants())?;
    mw.manifest.preconditions = failures.clone();
    let mut sgld = cfg.sgld.clone();
    sgld.seed = ctx.seed;
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("precondition failed: {f}");
        }
        if !ctx.allow_unsafe {
            mw.note("refused: preconditions failed; pass --allow-unsafe to run anyway");
            mw.finish(RunStatus::Refused)?;
            return Ok(Outcome::Violations);
        }
        sgld.strict_mode = false;
        mw.note("running outside the theorem range (--allow-unsafe)");
    }

    let ens = mw.time("ensemble", || {
        run_ensemble(&sgld, model.as_ref(), &mu, cfg.run.n_chains, cfg.run.n_datasets)
    })?;

    let n_traces = ens.traces.len() as f64;
    let mut trace = format!("{TRACE_HEADER}\n");
    for t in 0..=sgld.steps {
        let mut sums = [0.0; 4];
        for tr in &ens.traces {
            let r = &tr.records[t];
            sums[0] += r.w_norm_sq;
            sums[1] += r.grad_var_sample;
            sums[2] += r.grad_fullbatch_norm;
            sums[3] += r.grad_minibatch_norm;
        }
        trace.push_str(&format!(
            "{t},{},{},{},{}\n",
            sums[0] / n_traces,
            sums[1] / n_traces,
            sums[2] / n_traces,
            sums[3] / n_traces
        ));
    }
    mw.write(&ctx.artifact("trace", "csv"), &trace)?;

    let mut states = String::from("chain,dataset");
    for i in 0..sgld.dim {
        states.push_str(&format!(",w{i}"));
    }
    states.push('\n');
    for tr in &ens.traces {
        states.push_str(&format!("{},{}", tr.chain_index, tr.dataset_id));
        for v in tr.final_state() {
            states.push_str(&format!(",{v}"));
        }
        states.push('\n');
    }
    mw.write(&ctx.artifact("final_states", "csv"), &states)?;

    let mut rows: Vec<(f64, EstimateWithError)> = Vec::new();
    let est = &cfg.estimators;
    if est.gap_trials >= 2 {
        let gaps = mw.time("gen_gap", || {
            gen_gap_samples_with_pool(
                model.as_ref(),
                &mu,
                &sgld,
                est.gap_trials,
                cfg.bounds.eval,
                cfg.data.test_pool_factor,
            )
        })?;
        rows.push((sgld.steps as f64, EstimateWithError::from_samples("gen_gap", &gaps)));
    }
    if est.stability_pairs >= 2 {
        let stab = mw.time("grad_stability", || {
            grad_stability_trace(model.as_ref(), &mu, &sgld, est.stability_pairs)
        })?;
        rows.extend(stab.into_iter().map(|(t, e)| (t as f64, e)));
    }
    mw.write(
        &ctx.artifact("estimates", "csv"),
        &estimates_csv(rows.iter().map(|(x, e)| (*x, e))),
    )?;

    println!(
        "ran {} chains for {} steps; outputs in {}",
        ens.traces.len(),
        sgld.steps,
        mw.dir().display()
    );
    mw.finish(RunStatus::Complete)?;
    Ok(Outcome::Success)
}
