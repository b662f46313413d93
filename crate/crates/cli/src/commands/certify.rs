use anyhow::Result;
use sgld_core::certify;

use super::Outcome;
use crate::context::{ManifestWriter, RunContext, RunStatus};

/// Samples the claimed constants of the configured loss.
pub fn cmd_certify(ctx: &RunContext) -> Result<Outcome> {
    let model = ctx.config.model()?;
    let mut mw = ManifestWriter::begin(ctx, "certify")?;
    let report = mw.time("certify", || certify(model.as_ref(), ctx.config.certify.n_samples, ctx.seed))?;

    let mut csv = String::from("inequality_name,n_samples,n_violations,worst_margin\n");
    for c in &report.checks {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.inequality_name, c.n_samples, c.n_violations, c.worst_margin
        ));
    }
    mw.write(&ctx.artifact("certify", "csv"), &csv)?;
    let json = serde_json::to_string_pretty(&report)?;
    mw.write(&ctx.artifact("certify", "json"), &json)?;
    println!("{json}");

    let outcome = Outcome::from_ok(report.certified());
    if outcome == Outcome::Violations {
        eprintln!("certification failed: {} violations", report.total_violations());
        mw.finish(RunStatus::Violations)?;
    } else {
        mw.finish(RunStatus::Complete)?;
    }
    Ok(outcome)
}
