use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use smile_core::config::ExperimentConfig;

fn smile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smile")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.phantom.nx = 48;
    cfg.phantom.ny = 48;
    cfg.coils.support = [5, 5];
    cfg.acquisition.acs_lines = 20;
    cfg.compare.leakage = false;
    cfg.export.images = false;
    cfg.theory.n_coils = vec![2];
    cfg.theory.supports = vec![3];
    cfg.theory.extents = vec![1, 2, 3];
    cfg.theory.grid = 16;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = smile(&["compare", "--out", "x", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out_dir = tmp.path().join("out");
    let out = smile(&["recon", "--input", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[acquisition]\nbogus = 1\n").unwrap();
    let out = smile(&["phantom", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_geometry_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[acquisition]\nmb = 3\nextension = 2\n").unwrap();
    let out = smile(&["compare", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn omitted_seed_is_recorded_as_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out_dir = tmp.path().join("p");
    let out = smile(&["phantom", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let recorded = ExperimentConfig::load(&out_dir.join("config.resolved.toml")).unwrap();
    assert_eq!(recorded.seed, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed = 0"));

    let seeded = tmp.path().join("q");
    assert!(smile(&["phantom", "--config", &cfg, "--out", seeded.to_str().unwrap(), "--seed", "42"]).status.success());
    assert_eq!(ExperimentConfig::load(&seeded.join("config.resolved.toml")).unwrap().seed, 42);
}

#[test]
fn bad_thread_count_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_smile"))
        .args(["phantom", "--out", tmp.path().join("o").to_str().unwrap()])
        .env("SMILE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn file_pipeline_matches_in_memory_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dir = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();
    assert!(smile(&["compare", "--config", &cfg, "--out", &dir("c")]).status.success());
    assert!(smile(&["phantom", "--config", &cfg, "--out", &dir("p")]).status.success());
    assert!(smile(&["simulate", "--config", &cfg, "--input", &dir("p"), "--out", &dir("s")]).status.success());
    let out = smile(&["recon", "--config", &cfg, "--input", &dir("s"), "--out", &dir("r")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["metrics.csv", "summary.txt", "recon_smile.smle", "recon_caipi.smle", "reference.smle"] {
        let a = fs::read(tmp.path().join("c").join(name)).unwrap();
        let b = fs::read(tmp.path().join("r").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn theory_sweep_writes_table_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out_dir = tmp.path().join("t");
    let out = smile(&["theory-sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    // runtime goes to stderr only
    assert!(!fs::read_to_string(out_dir.join("summary.txt")).unwrap().contains("elapsed"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("elapsed"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |threads: &str, name: &str| {
        let out_dir = tmp.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_smile"))
            .args(["compare", "--config", &cfg, "--out", out_dir.to_str().unwrap()])
            .env("SMILE_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::read(out_dir.join("recon_smile.smle")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}
