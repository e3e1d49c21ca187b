use std::path::Path;
use std::process::Command as Process;

use wickheat_cli::config::SCHEMA_VERSION;
use wickheat_cli::{run_command, Command, ExperimentConfig, RunOptions};

fn run_in(cmd: Command, mut cfg: ExperimentConfig, dir: &Path, scale: f64, threads: Option<usize>) -> wickheat_cli::ExperimentRecord {
    cfg.output_dir = dir.to_path_buf();
    run_command(cmd, cfg, RunOptions { budget_scale: scale, threads }).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig::white_default();
    let text = cfg.to_toml_string().unwrap();
    let back = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
}

#[test]
fn config_rejects_unknown_keys_and_versions() {
    let text = ExperimentConfig::white_default().to_toml_string().unwrap();
    assert!(ExperimentConfig::from_toml_str(&format!("{text}\nbogus = 1\n")).is_err());
    let nested = text.replace("[budget]", "[budget]\nn_bogus = 3");
    assert!(ExperimentConfig::from_toml_str(&nested).is_err());
    let versioned = text.replace(&format!("schema_version = {SCHEMA_VERSION}"), "schema_version = 99");
    assert!(ExperimentConfig::from_toml_str(&versioned).is_err());
}

#[test]
fn minimal_config_fills_defaults() {
    let text = r#"
schema_version = 1
seed = 7

[covariance.temporal]
kind = "power_law"
alpha0 = 0.5

[covariance.spatial]
kind = "riesz"
alpha = 0.5

[grid]
t = [0.25]
x = [[0.0]]
"#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.budget, ExperimentConfig::white_default().budget);
    assert_eq!(cfg.spec().unwrap().alpha(), 0.5);
}

fn zero_kernel_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::white_default();
    cfg.covariance = ExperimentConfig::from_toml_str(
        "schema_version = 1\nseed = 1\n[covariance.temporal]\nkind = \"dirac\"\n[covariance.spatial]\nkind = \"zero\"\n[grid]\nt = [0.25]\nx = [[0.0]]\n",
    )
    .unwrap()
    .covariance;
    cfg
}

#[test]
fn zero_kernel_tails_are_degenerate_and_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_in(Command::Tails, zero_kernel_config(), dir.path(), 0.02, None);
    assert!(rec.passed, "{:?}", rec.failures());
    let (h, rows) = read_csv(&dir.path().join("tails_ensemble.csv"));
    let v = h.iter().position(|c| c == "value").unwrap();
    assert!(rows.iter().all(|r| r[v].parse::<f64>().unwrap() == 1.0));
    let (h, rows) = read_csv(&dir.path().join("tails_right.csv"));
    let f = h.iter().position(|c| c == "dominated_flag").unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r[f] == "true"));
}

#[test]
fn thresholds_below_validity_are_marked_out_of_domain() {
    // A point mass at 1 fits κ₁ ≈ 1 and the κ₂ floor, so every abscissa
    // (all equal to 1) sits just below the validity threshold κ₁e^{ρκ₂}.
    let dir = tempfile::tempdir().unwrap();
    let rec = run_in(Command::Tails, zero_kernel_config(), dir.path(), 0.02, None);
    let (h, rows) = read_csv(&dir.path().join("tails_right.csv"));
    let (b, f) = (h.iter().position(|c| c == "bound").unwrap(), h.iter().position(|c| c == "dominated_flag").unwrap());
    assert!(!rows.is_empty() && rows.iter().all(|r| r[b] == "out-of-domain" && r[f] == "true"));
    assert!(rec.checks.iter().filter(|c| c.name.contains("right tail")).all(|c| c.pass));
}

#[test]
fn injected_normal_density_matches_the_analytic_pdf() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::white_default();
    cfg.density.injected_normal = true;
    let rec = run_in(Command::Density, cfg, dir.path(), 1.0, None);
    assert!(rec.passed, "{:?}", rec.failures());
    let (h, rows) = read_csv(&dir.path().join("density_injected.csv"));
    let e = h.iter().position(|c| c == "relative_error").unwrap();
    assert!(rows[0][e].parse::<f64>().unwrap() <= 0.02);
    assert!(!dir.path().join("density_ensemble.csv").exists());
}

#[test]
fn outputs_do_not_depend_on_the_thread_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_in(Command::Tails, ExperimentConfig::white_default(), a.path(), 0.02, Some(1));
    run_in(Command::Tails, ExperimentConfig::white_default(), b.path(), 0.02, Some(3));
    for name in ["tails_ensemble.csv", "tails_pz.csv", "tails_right.csv", "tails_small_ball.csv", "tails_params.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn record_lists_outputs_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::white_default();
    let hash = cfg.hash().unwrap();
    let rec = run_in(Command::Moments, cfg, dir.path(), 0.02, None);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("moments_record.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], hash.as_str());
    assert_eq!(json["root_seed"], 20240601);
    assert!(rec.seed_ledger.keys().any(|k| k.contains("chaos")));
    assert!(rec.outputs.iter().all(|p| p.exists()));
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_wickheat");
    let dir = tempfile::tempdir().unwrap();
    let ok = Process::new(exe)
        .args(["moments", "--budget-scale", "0.02", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nnonsense = true\n").unwrap();
    let err = Process::new(exe).args(["moments", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(err.code(), Some(2));

    // A right-tail fit at an impossible R² threshold fails a shape check.
    let mut cfg = ExperimentConfig::white_default();
    cfg.density.min_r2 = 1.5;
    cfg.output_dir = dir.path().join("density");
    let path = dir.path().join("strict.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let fail = Process::new(exe).args(["density", "--budget-scale", "0.05", "--config"]).arg(&path).status().unwrap();
    assert_eq!(fail.code(), Some(1));
}
