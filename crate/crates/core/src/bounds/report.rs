use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::formulas::*;
use super::{BoundOptions, DerivedConstants, LsiMode, FLAG_HEURISTIC};
use crate::loss::LossConstants;
use crate::sgld::SgldConfig;

/// Measured inputs some bounds need; absent inputs leave their entries empty.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// Horizon `T` at which every bound is evaluated.
    pub steps: usize,
    pub sigma_g_sq: Option<f64>,
    /// Conditional gradient variance at steps `0..=T` (or longer).
    pub variance_trace: Option<Vec<f64>>,
    /// `(step, E ||grad F(W, S) - grad F(W, S')||^2)` pairs.
    pub grad_diff_trace: Option<(Vec<usize>, Vec<f64>)>,
    pub mi_upper: Option<f64>,
    /// User-supplied `(C1, C2)` for the comparison shape.
    pub farghly: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub value: Option<f64>,
    pub inputs: BTreeMap<String, f64>,
    pub constants_used: BTreeMap<String, f64>,
    pub preconditions_ok: bool,
    pub flags: Vec<String>,
    pub notes: Vec<String>,
}

impl BoundEntry {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            value: None,
            inputs: BTreeMap::new(),
            constants_used: BTreeMap::new(),
            preconditions_ok: true,
            flags: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn refuse(mut self, note: impl Into<String>) -> Self {
        self.preconditions_ok = false;
        self.value = None;
        self.notes.push(note.into());
        self
    }

    fn input(mut self, key: &str, value: f64) -> Self {
        self.inputs.insert(key.to_string(), value);
        self
    }

    fn constant(mut self, key: &str, value: f64) -> Self {
        self.constants_used.insert(key.to_string(), value);
        self
    }

    fn flag(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub model: String,
    pub steps: usize,
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    pub constants: Option<DerivedConstants>,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn entry(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.entry(name).and_then(|e| e.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per bound: `name,value,T,n,eta,beta,flags`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value,T,n,eta,beta,flags\n");
        for e in &self.entries {
            let value = e.value.map(|v| v.to_string()).unwrap_or_default();
            let mut flags = e.flags.clone();
            if !e.preconditions_ok {
                flags.push("preconditions-failed".into());
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.name,
                value,
                self.steps,
                self.n,
                self.eta,
                self.beta,
                flags.join(";")
            ));
        }
        out
    }
}

fn with_value(mut entry: BoundEntry, value: crate::error::Result<f64>) -> BoundEntry {
    match value {
        Ok(v) => {
            entry.value = Some(v);
            entry
        }
        Err(e) => entry.refuse(e.to_string()),
    }
}

/// Evaluates every bound for `cfg` at horizon `inputs.steps`.
pub fn build_report(
    model: &str,
    lc: &LossConstants,
    cfg: &SgldConfig,
    opts: &BoundOptions,
    inputs: &ReportInputs,
) -> BoundReport {
    let (eta, beta, n, d, steps) = (cfg.eta, cfg.beta, cfg.n, cfg.dim, inputs.steps);
    let dc = DerivedConstants::compute(lc, cfg, opts);
    let sigma_g_sq = inputs.sigma_g_sq;
    let no_sigma = "sigma_g^2 not supplied";
    let mut entries = Vec::new();

    // Xu-Raginsky with an externally supplied MI bound
    let e = BoundEntry::new("xu_raginsky");
    entries.push(match (sigma_g_sq, inputs.mi_upper) {
        (None, _) => e.refuse(no_sigma),
        (_, None) => e.refuse("no mutual-information upper bound supplied"),
        (Some(s), Some(mi)) => with_value(e.input("mi_upper", mi).input("sigma_g_sq", s), bound_xu_raginsky(s, n, mi)),
    });

    let e = BoundEntry::new("pensia");
    entries.push(match (sigma_g_sq, &inputs.variance_trace) {
        (None, _) => e.refuse(no_sigma),
        (_, None) => e.refuse("no gradient-variance trace supplied"),
        (_, Some(trace)) if trace.len() < steps + 1 => {
            e.refuse(format!("variance trace covers {} steps, need {}", trace.len(), steps + 1))
        }
        (Some(s), Some(trace)) => match bound_pensia(&trace[..=steps], eta, beta, d, n, s) {
            Ok(p) => {
                let mut e = e.input("mi_bound", p.mi_bound).input("sigma_g_sq", s);
                e.value = Some(p.value);
                e
            }
            Err(err) => e.refuse(err.to_string()),
        },
    });

    let failures = cfg.precondition_failures(lc);
    let range_note = match &failures {
        Ok(f) if f.is_empty() => None,
        Ok(f) => Some(format!(
            "range conditions failed: {}",
            f.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        )),
        Err(err) => Some(err.to_string()),
    };

    let mut time_independent = None;
    let e = BoundEntry::new("time_independent");
    entries.push(match (&dc, &range_note, sigma_g_sq) {
        (Err(err), _, _) => e.refuse(err.to_string()),
        (_, Some(note), _) => e.refuse(note.clone()),
        (_, _, None) => e.refuse(no_sigma),
        (Ok(dc), None, Some(s)) => {
            let mut e = annotate_chain(e, dc, beta).input("sigma_g_sq", s);
            match bound_time_independent(dc, eta, beta, steps, n, s) {
                Ok(b) => {
                    time_independent = Some(b);
                    e = e.input("kl_bound", b.kl_bound);
                    if b.saturated {
                        e.notes.push("saturated: eta T >= 4 beta c_LS".into());
                    }
                    e.value = Some(b.value);
                    e
                }
                Err(err) => e.refuse(err.to_string()),
            }
        }
    });

    let e = BoundEntry::new("strongly_convex");
    entries.push(match (lc.strong_convexity, &inputs.grad_diff_trace, sigma_g_sq) {
        (None, _, _) => e.refuse("loss is not strongly convex"),
        (_, None, _) => e.refuse("no gradient-difference trace supplied"),
        (_, _, None) => e.refuse(no_sigma),
        (Some(r), Some((step_idx, values)), Some(s)) => {
            let keep = step_idx.iter().take_while(|&&t| t <= steps).count();
            let times: Vec<f64> = step_idx[..keep].iter().map(|&t| t as f64 * eta).collect();
            let e = e.constant("R", r).input("sigma_g_sq", s);
            with_value(
                e,
                bound_strongly_convex(&times, &values[..keep], r, beta, n, s, steps as f64 * eta),
            )
        }
    });

    let e = BoundEntry::new("farghly_shape").flag("comparison-only");
    entries.push(match inputs.farghly {
        None => e.refuse("constants C1, C2 not supplied"),
        Some((c1, c2)) => {
            let e = e.constant("C1", c1).constant("C2", c2);
            if eta > 1.0 / (2.0 * lc.dissipativity) {
                e.refuse("requires eta <= 1/(2m)")
            } else {
                with_value(e, bound_farghly_shape(c1, c2, eta, steps, n, cfg.batch_size))
            }
        }
    });

    let mut subexp_value = None;
    let e = BoundEntry::new("subexp_gen");
    entries.push(match (&dc, time_independent, &range_note) {
        (Err(err), _, _) => e.refuse(err.to_string()),
        (_, _, Some(note)) => e.refuse(note.clone()),
        (Ok(dc), tb, None) => {
            // the MI bound does not depend on sigma_g^2
            let kl = match tb {
                Some(b) => Ok(b.kl_bound),
                None => bound_time_independent(dc, eta, beta, steps, n, 1.0).map(|b| b.kl_bound),
            };
            let e = annotate_chain(e, dc, beta)
                .constant("sigma_e_sq", dc.sigma_e_sq)
                .constant("nu", dc.nu)
                .constant("C5", dc.c5);
            match kl.and_then(|kl| bound_subexp_gen(kl / n as f64, dc.sigma_e_sq, dc.nu).map(|g| (kl, g))) {
                Ok((kl, g)) => {
                    let mut e = e.input("y", kl / n as f64);
                    e.notes.push(format!("branch: {:?}", g.branch));
                    e.value = Some(g.value);
                    subexp_value = Some(g.value);
                    e
                }
                Err(err) => e.refuse(err.to_string()),
            }
        }
    });

    let e = BoundEntry::new("excess_risk").flag("order-level");
    entries.push(match (&dc, subexp_value) {
        (Err(err), _) => e.refuse(err.to_string()),
        (_, None) => e.refuse("generalization term unavailable"),
        (Ok(dc), Some(gen)) => match excess_risk_bound(lc, dc, eta, beta, d, steps, gen) {
            Ok(x) => {
                let mut e = annotate_chain(e, dc, beta)
                    .input("gen_term", x.gen_term)
                    .input("convergence_term", x.convergence_term)
                    .input("minimization_term", x.minimization_term);
                e.value = Some(x.total);
                e
            }
            Err(err) => e.refuse(err.to_string()),
        },
    });

    BoundReport {
        model: model.to_string(),
        steps,
        n,
        eta,
        beta,
        constants: dc.ok(),
        entries,
    }
}

fn annotate_chain(mut e: BoundEntry, dc: &DerivedConstants, beta: f64) -> BoundEntry {
    for (k, v) in [
        ("c_LS", dc.c_ls),
        ("C0", dc.c0),
        ("D1", dc.d1),
        ("D2", dc.d2),
        ("D3", dc.d3),
        ("D4", dc.d4),
        ("D5", dc.d5),
        ("kappa", dc.kappa(beta)),
    ] {
        e = e.constant(k, v);
    }
    if !dc.heuristic.is_empty() {
        e = e.flag(FLAG_HEURISTIC);
    }
    if dc.lsi_mode == LsiMode::GeneralDissipative {
        e.notes.push("general LSI constant uses B = M sqrt(b/m)".into());
    }
    if dc.empirical_d1 {
        e.notes.push("D1 replaced by the measured stability statistic".into());
    }
    e
}
