use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgld_cli::context::LOCK_NAME;
use sgld_cli::table::Table;
use tempfile::TempDir;

const BASE: &str = r#"
[loss]
family = "quadratic"

[sgld]
eta = 0.01
beta = 4.0
batch_size = 10
n = 50
steps = 300
dim = 2
init_var = 1.0
seed = 3
strict_mode = true

[run]
n_chains = 4
n_datasets = 1

[certify]
n_samples = 5000

[bounds]
horizons = [0, 100, 200, 300]
farghly = [1.0, 1.0]
mi_pairs = 20

[estimators]
gap_trials = 20
stability_pairs = 10

[oracle]
chains = 100
check_times = [10, 100]
kl_steps = 1000

[fp]
n_cells = 64
t_end = 0.5
"#;

struct Lab {
    dir: TempDir,
}

impl Lab {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn lab_cmd(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgld-lab"));
    cmd.args(args).env_remove(sgld_cli::THREADS_ENV);
    cmd
}

fn lab(args: &[&str]) -> Output {
    lab_cmd(args).output().unwrap()
}

fn invoke(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    lab(&args)
}

fn one_file(dir: &Path, prefix: &str) -> PathBuf {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    assert_eq!(found.len(), 1, "expected one {prefix}* in {}", dir.display());
    found.pop().unwrap()
}

fn csv_name(dir: &Path, prefix: &str) -> String {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .find(|n| n.starts_with(prefix) && n.ends_with(".csv"))
        .unwrap()
}

fn bound_column(dir: &Path, name: &str) -> Vec<(usize, Option<f64>)> {
    let t = Table::read(&dir.join(csv_name(dir, "bounds_"))).unwrap();
    t.rows
        .iter()
        .filter(|r| r[0] == name)
        .map(|r| (r[2].parse().unwrap(), r[1].parse().ok()))
        .collect()
}

#[test]
fn certify_default_passes() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    let out = invoke("certify", &cfg, &lab_.out("o"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = Table::read(&lab_.out("o").join(csv_name(&lab_.out("o"), "certify_"))).unwrap();
    assert!(csv.floats("n_violations").unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn certify_halved_smoothness_reports_witness() {
    let lab_ = Lab::new();
    let text = BASE.replace("family = \"quadratic\"", "family = \"quadratic\"\nclaimed = { smoothness = 0.5 }");
    let cfg = lab_.config("c.toml", &text);
    let out = invoke("certify", &cfg, &lab_.out("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"witness\": {"), "{stdout}");
}

#[test]
fn malformed_config_exits_one() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", "[loss\nfamily = 3");
    let out = invoke("certify", &cfg, &lab_.out("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parsing"));
    let cfg = lab_.config("d.toml", &BASE.replace("seed = 3", "seed = 3\nsede = 4"));
    assert_eq!(invoke("run", &cfg, &lab_.out("o"), &[]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(lab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lab(&["run"]).status.code(), Some(1));
    assert_eq!(lab(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_is_deterministic_and_names_embed_seed_and_hash() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    for d in ["a", "b"] {
        assert_eq!(invoke("run", &cfg, &lab_.out(d), &["--seed", "42"]).status.code(), Some(0));
    }
    let trace = one_file(&lab_.out("a"), "trace_");
    let name = trace.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("trace_s42_"));
    for prefix in ["trace_", "estimates_", "final_states_"] {
        let a = fs::read(one_file(&lab_.out("a"), prefix)).unwrap();
        let b = fs::read(one_file(&lab_.out("b"), prefix)).unwrap();
        assert_eq!(a, b, "{prefix}");
    }
    let manifest = fs::read_to_string(one_file(&lab_.out("a"), "manifest_run_")).unwrap();
    assert!(manifest.contains("\"status\": \"complete\""));
    assert!(manifest.contains(&name));
}

#[test]
fn zero_steps_give_a_single_row() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", &BASE.replace("steps = 300", "steps = 0"));
    assert_eq!(invoke("run", &cfg, &lab_.out("o"), &[]).status.code(), Some(0));
    let t = Table::read(&one_file(&lab_.out("o"), "trace_")).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0][0], "0");
}

#[test]
fn chain_streams_do_not_depend_on_ensemble_size() {
    let lab_ = Lab::new();
    let one = lab_.config("one.toml", &BASE.replace("n_chains = 4", "n_chains = 1"));
    let eight = lab_.config("eight.toml", &BASE.replace("n_chains = 4", "n_chains = 8"));
    assert_eq!(invoke("run", &one, &lab_.out("one"), &[]).status.code(), Some(0));
    assert_eq!(invoke("run", &eight, &lab_.out("eight"), &[]).status.code(), Some(0));
    let a = Table::read(&one_file(&lab_.out("one"), "final_states_")).unwrap();
    let b = Table::read(&one_file(&lab_.out("eight"), "final_states_")).unwrap();
    assert_eq!(b.rows.len(), 8);
    assert_eq!(a.rows[0], b.rows[0]);
    let ea = Table::read(&one_file(&lab_.out("one"), "estimates_")).unwrap();
    let eb = Table::read(&one_file(&lab_.out("eight"), "estimates_")).unwrap();
    assert_eq!(ea, eb);
}

#[test]
fn unsafe_configs_are_refused_unless_allowed() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", &BASE.replace("eta = 0.01", "eta = 0.5"));
    let out = invoke("run", &cfg, &lab_.out("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = fs::read_to_string(one_file(&lab_.out("o"), "manifest_run_")).unwrap();
    assert!(manifest.contains("\"status\": \"refused\""));
    assert!(manifest.contains("eta < m/(5M^2)"), "{manifest}");
    assert!(fs::read_dir(lab_.out("o")).unwrap().all(|e| {
        !e.unwrap().file_name().to_str().unwrap().starts_with("trace_")
    }));
    let out = invoke("run", &cfg, &lab_.out("o"), &["--allow-unsafe"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn locked_directory_is_refused() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    fs::create_dir_all(lab_.out("o")).unwrap();
    fs::write(lab_.out("o").join(LOCK_NAME), "").unwrap();
    let out = invoke("run", &cfg, &lab_.out("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    fs::remove_file(lab_.out("o").join(LOCK_NAME)).unwrap();
    assert_eq!(invoke("run", &cfg, &lab_.out("o"), &[]).status.code(), Some(0));
    assert!(!lab_.out("o").join(LOCK_NAME).exists());
}

#[test]
fn bounds_need_traces() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    assert_eq!(invoke("bounds", &cfg, &lab_.out("o"), &[]).status.code(), Some(1));
}

#[test]
fn bound_columns_behave_in_t() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    let o = lab_.out("o");
    assert_eq!(invoke("run", &cfg, &o, &[]).status.code(), Some(0));
    assert_eq!(invoke("bounds", &cfg, &o, &[]).status.code(), Some(0));

    for name in ["time_independent", "strongly_convex", "farghly_shape", "subexp_gen"] {
        let col = bound_column(&o, name);
        assert_eq!(col[0], (0, Some(0.0)), "{name} at T = 0");
    }
    // eta T >= 4 beta c_LS = 2 from T = 200 on
    let ti = bound_column(&o, "time_independent");
    assert_eq!(ti[2].1, ti[3].1);
    assert!(ti[1].1 < ti[2].1);
    let pensia: Vec<f64> = bound_column(&o, "pensia").iter().map(|r| r.1.unwrap()).collect();
    assert!(pensia.windows(2).all(|w| w[1] > w[0]), "{pensia:?}");
    // exact MI needs full batches
    assert!(bound_column(&o, "xu_raginsky").iter().all(|r| r.1.is_none()));
}

#[test]
fn full_batch_runs_get_exact_mutual_information() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", &BASE.replace("batch_size = 10", "batch_size = 50"));
    let o = lab_.out("o");
    assert_eq!(invoke("run", &cfg, &o, &[]).status.code(), Some(0));
    assert_eq!(invoke("bounds", &cfg, &o, &[]).status.code(), Some(0));
    let xr = bound_column(&o, "xu_raginsky");
    assert!(xr.iter().skip(1).all(|r| r.1.is_some_and(|v| v > 0.0)), "{xr:?}");
}

#[test]
fn pensia_outgrows_time_independent() {
    let lab_ = Lab::new();
    let text = BASE
        .replace("steps = 300", "steps = 100000")
        .replace("horizons = [0, 100, 200, 300]", "horizons = [1000, 100000]")
        .replace("n_chains = 4", "n_chains = 1")
        .replace("gap_trials = 20", "gap_trials = 0")
        .replace("stability_pairs = 10", "stability_pairs = 0");
    let cfg = lab_.config("c.toml", &text);
    let o = lab_.out("o");
    assert_eq!(invoke("run", &cfg, &o, &[]).status.code(), Some(0));
    assert_eq!(invoke("bounds", &cfg, &o, &[]).status.code(), Some(0));
    let p = bound_column(&o, "pensia");
    let t = bound_column(&o, "time_independent");
    let ratio = |i: usize| p[i].1.unwrap() / t[i].1.unwrap();
    assert!(ratio(1) > ratio(0));
}

#[test]
fn verify_passes_on_defaults_and_catches_falsified_constants() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    let o = lab_.out("o");
    let out = invoke("verify", &cfg, &o, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let fp = Table::read(&one_file(&o, "fp_summary_")).unwrap();
    let rates = fp.floats("violation_rate").unwrap();
    assert_eq!(fp.floats("n_cells").unwrap(), vec![64.0, 128.0]);
    assert!(rates[1] <= rates[0]);
    let fine = Table::read(&one_file(&o, "fp_fine_")).unwrap();
    fine.expect_header("t,kl,fisher,stability_term,dkl_dt,slack").unwrap();

    let falsified = lab_.config("f.toml", &BASE.replace("kl_steps = 1000", "kl_steps = 1000\nfalsify = true"));
    let out = invoke("verify", &falsified, &lab_.out("f"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_passes_single_reports_through() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    let o = lab_.out("o");
    assert_eq!(invoke("run", &cfg, &o, &[]).status.code(), Some(0));
    assert_eq!(invoke("bounds", &cfg, &o, &[]).status.code(), Some(0));
    let out = lab(&["compare", o.to_str().unwrap(), "--out", lab_.out("cmp").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = Table::read(&lab_.out("cmp").join(csv_name(&lab_.out("cmp"), "compare_"))).unwrap();
    table.expect_header(sgld_cli::commands::COMPARE_HEADER).unwrap();
    let bounds = Table::read(&o.join(csv_name(&o, "bounds_"))).unwrap();
    assert_eq!(table.rows.len(), bounds.rows.len());
    let gap_le = table.column("gap_le_bound").unwrap();
    assert!(table.rows.iter().any(|r| r[gap_le] == "true"));
    assert!(table.rows.iter().all(|r| r[gap_le] != "false"));
}

#[test]
fn compare_rejects_schema_mismatch() {
    let lab_ = Lab::new();
    let d = lab_.out("bad");
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("bounds_x.csv"), "name,value\nfoo,1\n").unwrap();
    let out = lab(&["compare", d.to_str().unwrap(), "--out", lab_.out("cmp").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn thread_variable_applies_only_without_flag() {
    let lab_ = Lab::new();
    let cfg = lab_.config("c.toml", BASE);
    let args = ["certify", "--config", cfg.to_str().unwrap(), "--out"];
    let mut a: Vec<&str> = args.to_vec();
    let o1 = lab_.out("o1");
    a.push(o1.to_str().unwrap());
    let out = lab_cmd(&a).env(sgld_cli::THREADS_ENV, "0").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    a.extend(["--threads", "2"]);
    let out = lab_cmd(&a).env(sgld_cli::THREADS_ENV, "0").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
