use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use super::Outcome;
use crate::context::{sha256_hex, ManifestWriter, RunStatus};
use crate::table::Table;

pub const BOUNDS_HEADER: &str = "name,value,T,n,eta,beta,flags";
pub const COMPARE_HEADER: &str = "bound,n,T,value,empirical_gap,gap_stderr,gap_le_bound";
const ESTIMATES_HEADER: &str = "estimator,t_or_lambda,mean,stderr,n";

/// Flags marking entries that are not generalization bounds in their own right.
const NOT_A_GAP_BOUND: [&str; 3] = ["comparison-only", "order-level", "preconditions-failed"];

#[derive(Debug, Clone, PartialEq)]
struct Row {
    value: Option<f64>,
    flags: String,
    gap: Option<(f64, f64)>,
}

/// Bounds files in `dir` and their tags, in name order.
fn bounds_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(tag) = name.strip_prefix("bounds_").and_then(|n| n.strip_suffix(".csv")) {
            out.push((tag.to_string(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no bounds report in {}", dir.display());
    }
    Ok(out)
}

/// Joins bound reports with the empirical gaps measured by the same runs into
/// one table keyed by `(bound, n, T)`.
///
/// Returns [`Outcome::Violations`] when a measured gap exceeds a bound that
/// claims to control it.
pub fn cmd_compare(out: &Path, dirs: &[PathBuf]) -> Result<Outcome> {
    if dirs.is_empty() {
        bail!("compare needs at least one report directory");
    }
    let mut table: BTreeMap<(String, usize, usize), Row> = BTreeMap::new();
    let mut digest = String::new();
    for dir in dirs {
        for (tag, path) in bounds_files(dir)? {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            digest.push_str(&sha256_hex(text.as_bytes()));
            let bounds = Table::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            bounds.expect_header(BOUNDS_HEADER)?;

            let mut gaps: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            let est_path = dir.join(format!("estimates_{tag}.csv"));
            if est_path.exists() {
                let est = Table::read(&est_path)?;
                est.expect_header(ESTIMATES_HEADER)?;
                for r in est.rows.iter().filter(|r| r[0] == "gen_gap") {
                    gaps.insert(r[1].parse::<f64>()? as usize, (r[2].parse()?, r[3].parse()?));
                }
            }

            for r in &bounds.rows {
                let value = if r[1].is_empty() { None } else { Some(r[1].parse::<f64>()?) };
                let (n, t): (usize, usize) = (r[3].parse()?, r[2].parse()?);
                let row = Row {
                    value,
                    flags: r[6].clone(),
                    gap: gaps.get(&t).copied(),
                };
                let key = (r[0].clone(), n, t);
                match table.get(&key) {
                    Some(prev) if prev != &row => bail!("conflicting entries for {key:?}"),
                    _ => {
                        table.insert(key, row);
                    }
                }
            }
        }
    }

    let hash = sha256_hex(digest.as_bytes());
    let tag = &hash[..12];
    let mut mw = ManifestWriter::begin_raw(out, "compare", tag, &hash, None, None)?;
    for d in dirs {
        mw.note(format!("input: {}", d.display()));
    }

    let mut csv = format!("{COMPARE_HEADER}\n");
    let mut text = format!(
        "{:<18} {:>6} {:>9} {:>14} {:>14} {:>6}\n",
        "bound", "n", "T", "value", "gap", "valid"
    );
    let mut violations = 0;
    for ((name, n, t), row) in &table {
        let checked = row.value.is_some() && !NOT_A_GAP_BOUND.iter().any(|f| row.flags.contains(f));
        let le = match (row.value, row.gap) {
            (Some(v), Some((g, _))) if checked => Some(g <= v),
            _ => None,
        };
        if le == Some(false) {
            violations += 1;
        }
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{name},{n},{t},{},{},{},{}\n",
            fmt(row.value),
            fmt(row.gap.map(|g| g.0)),
            fmt(row.gap.map(|g| g.1)),
            le.map(|b| b.to_string()).unwrap_or_default()
        ));
        let short = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        text.push_str(&format!(
            "{:<18} {:>6} {:>9} {:>14} {:>14} {:>6}\n",
            name,
            n,
            t,
            short(row.value),
            short(row.gap.map(|g| g.0)),
            le.map_or("-", |b| if b { "yes" } else { "NO" })
        ));
    }
    mw.write(&format!("compare_{tag}.csv"), &csv)?;
    mw.write(&format!("compare_{tag}.txt"), &text)?;
    print!("{text}");
    let outcome = Outcome::from_ok(violations == 0);
    mw.finish(if outcome == Outcome::Success {
        RunStatus::Complete
    } else {
        RunStatus::Violations
    })?;
    Ok(outcome)
}
