use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use slowfast_cli::config::{Experiment, ExperimentConfig};
use slowfast_cli::run_cli;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const ORACLE: &str = r#"
id = "oracle"
seed = 3

[model]
id = "example1"
c0 = 1.0
beta = 0.0

[experiment]
kind = "oracle-compare"
"#;

#[test]
fn every_shipped_config_parses_and_round_trips() {
    let mut kinds = Vec::new();
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let again = ExperimentConfig::from_toml(&config.to_toml()).unwrap();
            assert_eq!(config, again, "{}", path.display());
            kinds.push(config.experiment.kind());
        }
    }
    kinds.sort_by_key(|k| k.name());
    kinds.dedup();
    assert_eq!(kinds.len(), 8, "{kinds:?}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = ORACLE.replace("beta = 0.0", "beta = 0.0\ngamma = 2.0");
    let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
    assert!(err.contains("gamma"), "{err}");
    let text = ORACLE.replace("kind = \"oracle-compare\"", "kind = \"oracle-compare\"\nbogus = 1");
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn missing_keys_are_named() {
    let err = ExperimentConfig::from_toml(&ORACLE.replace("seed = 3\n", "")).unwrap_err().to_string();
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn short_or_unsorted_grids_are_refused() {
    let short = format!("{ORACLE}epsilons = [0.1, 0.05]\n");
    assert!(ExperimentConfig::from_toml(&short).is_err());
    let unsorted = format!("{ORACLE}epsilons = [0.1, 0.2, 0.05]\n");
    assert!(ExperimentConfig::from_toml(&unsorted).is_err());
}

#[test]
fn empty_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "empty.toml", "");
    let status = bin().arg("run").arg("--config").arg(&path).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run_cli(["slowfast", "run", "--nope"]), 1);
    assert_eq!(run_cli(["slowfast"]), 1);
    assert_eq!(run_cli(["slowfast", "--help"]), 0);
}

#[test]
fn list_models_shows_the_registry() {
    let out = bin().arg("list-models").arg("--json").output().unwrap();
    assert!(out.status.success());
    let models: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ids: Vec<&str> = models.as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert!(ids.len() >= 4);
    for id in ["example1", "example2-periodic", "linear-nd", "nonlinear-1d"] {
        assert!(ids.contains(&id), "{ids:?}");
    }
    assert!(bin().arg("list-models").output().unwrap().status.success());
}

#[test]
fn oracle_compare_recovers_unit_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "oracle.toml", ORACLE);
    let out = bin().args(["oracle-compare", "--json", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = summary["fits"]["oracle"]["exponent"].as_f64().unwrap();
    assert!((p - 1.0).abs() < 0.1, "{p}");
    let table = fs::read_to_string(dir.path().join("oracle-3-oracle.csv")).unwrap();
    assert!(table.starts_with("eps,exact_error,fitted_error,fitted_exponent,declared_exponent"));
    assert_eq!(table.lines().count(), 10);
}

#[test]
fn subcommand_must_match_the_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "oracle.toml", ORACLE);
    let code = run_cli(["slowfast", "simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn y_dependent_noise_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
id = "pre"
seed = 1

[model]
id = "nonlinear-1d"
sigma_y_coupling = 0.5

[experiment]
kind = "strong-rate"

[experiment.averaging]
source = "estimate"

[experiment.grid]
epsilons = [0.125, 0.0625, 0.03125]
n_paths = 10
x0 = [0.0]
y0 = [0.0]
"#;
    let path = write(dir.path(), "pre.toml", text);
    let out = bin().args(["strong-rate", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_rule_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = ORACLE.replace("[experiment]\nkind = \"oracle-compare\"", "[experiment]\nkind = \"oracle-compare\"\ntolerance = 0.0");
    let path = write(dir.path(), "strict.toml", &text);
    assert_eq!(run_cli(["slowfast", "run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 2);
}

fn checksums(dir: &Path, stem: &str) -> Vec<serde_json::Value> {
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}-manifest.json"))).unwrap()).unwrap();
    manifest["outputs"].as_array().unwrap().clone()
}

#[test]
fn identical_config_and_seed_give_identical_outputs() {
    let text = r#"
id = "repro"
seed = 11

[model]
id = "example2-decaying"
amp = 1.0
p = 1.0

[experiment]
kind = "strong-rate"

[experiment.grid]
epsilons = { from = 3, to = 5 }
n_steps = 8
n_paths = 300
x0 = [0.0]
y0 = [0.5]
"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let path = write(a.path(), "repro.toml", text);
    for (dir, threads) in [(a.path(), "1"), (b.path(), "2")] {
        let code = run_cli(["slowfast", "run", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--threads", threads]);
        assert!(code == 0 || code == 2);
    }
    let (ma, mb) = (checksums(a.path(), "repro-11"), checksums(b.path(), "repro-11"));
    assert!(!ma.is_empty());
    assert_eq!(ma, mb);

    // a different seed changes the Monte-Carlo tables
    let code = run_cli(["slowfast", "run", "--config", path.to_str().unwrap(), "--out", a.path().to_str().unwrap(), "--seed", "12"]);
    assert!(code == 0 || code == 2);
    let mc = checksums(a.path(), "repro-12");
    assert_ne!(ma[0]["sha256"], mc[0]["sha256"]);
}

#[test]
fn manifest_records_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "oracle.toml", ORACLE);
    assert_eq!(run_cli(["slowfast", "run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "9"]), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("oracle-9-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["library_version"], slowfast::VERSION);
    let mut config = ExperimentConfig::from_toml(ORACLE).unwrap();
    config.seed = 9;
    assert_eq!(manifest["config_sha256"], slowfast_cli::output::sha256_hex(config.to_toml().as_bytes()));
    assert!(matches!(config.experiment, Experiment::OracleCompare { .. }));
}
