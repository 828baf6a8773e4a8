use std::path::Path;
use std::process::{Command, Output};

const MIXTURE: &str = "[mixture]\nmasses = [1.0, 2.0]\ngamma = 0.0\n";

fn mskin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mskin"))
        .args(args)
        .current_dir(cwd)
        .env("MSKIN_THREADS", "1")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stationary_run() -> String {
    format!(
        "mode = \"ms_run\"\n{MIXTURE}\n[grid]\ndim = 1\nn_x = 16\n\n[initial]\nc_bar = [0.4, 0.6]\nlambda = 1.0\nalpha = 0.1\n\
         profiles = [[{{ shape = \"constant\", value = 0.0 }}], [{{ shape = \"constant\", value = 0.0 }}]]\n\n\
         [numerics]\ndt = 1e-3\nt_end = 0.01\ns_list = [0, 2]\nlambda_a_samples = 10\n"
    )
}

fn small_coeffs(seed: u64) -> String {
    format!("mode = \"coeff_table\"\n{MIXTURE}\n[numerics]\nmc_samples = 20000\nseed = {seed}\n")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unsupported_gamma_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &small_coeffs(1).replace("gamma = 0.0", "gamma = 1.5"));
    let out = mskin(&["run", &cfg, "--quiet"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", &small_coeffs(1).replace("mc_samples", "mc_sample"));
    assert_eq!(mskin(&["run", &cfg], tmp.path()).status.code(), Some(2));
    assert_eq!(mskin(&["run", "nope.toml"], tmp.path()).status.code(), Some(2));
}

#[test]
fn stationary_run_passes_with_zero_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "still.toml", &stationary_run());
    let out = mskin(&["run", &cfg, "--out", "res", "--quiet"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let series = std::fs::read_to_string(tmp.path().join("res/series.csv")).unwrap();
    let mut lines = series.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() >= 10);
    for col in ["E_0", "D_0", "E_2", "D_2"] {
        let k = header.iter().position(|h| *h == col).unwrap();
        assert!(rows.iter().all(|r| r[k] == 0.0), "{col}");
    }
    let m = json(&tmp.path().join("res/manifest.json"));
    assert_eq!(m["passed"], true);
    assert!(tmp.path().join("res/timing.json").exists());
}

#[test]
fn verify_of_empty_directory_is_empty_summary() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = mskin(&["verify", "empty", "--out", "res", "--quiet"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let s = json(&tmp.path().join("res/summary.json"));
    assert_eq!(s["scenarios"].as_array().unwrap().len(), 0);
}

#[test]
fn verify_isolates_a_broken_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("suite");
    std::fs::create_dir(&dir).unwrap();
    write(&dir, "a_good.toml", &small_coeffs(3));
    write(&dir, "b_bad.toml", &small_coeffs(3).replace("[1.0, 2.0]", "[1.0, -2.0]"));
    write(&dir, "c_still.toml", &stationary_run());
    let out = mskin(&["verify", "suite", "--out", "res", "--quiet"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let s = json(&tmp.path().join("res/summary.json"));
    let status: Vec<&str> = s["scenarios"].as_array().unwrap().iter().map(|e| e["status"].as_str().unwrap()).collect();
    assert_eq!(status, ["passed", "config_error", "passed"]);
    assert!(tmp.path().join("res/a_good/coeffs.csv").exists());
    assert!(tmp.path().join("res/c_still/series.csv").exists());
}

#[test]
fn print_coeffs_maxwell_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "m.toml", &small_coeffs(1).replace("[1.0, 2.0]", "[1.0, 1.0]"));
    let out = mskin(&["print-coeffs", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,j,mu_red,delta,k_t1"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r[4] - 0.5).abs() < 1e-15);
        assert!((r[3] - 2.0).abs() < 1e-14);
    }
}

#[test]
fn seed_override_changes_hash_and_repeat_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_coeffs(5));
    for d in ["r1", "r2"] {
        assert_eq!(mskin(&["run", &cfg, "--out", d, "--quiet"], tmp.path()).status.code(), Some(0));
    }
    assert_eq!(mskin(&["run", &cfg, "--out", "r3", "--seed", "6", "--quiet"], tmp.path()).status.code(), Some(0));
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("r1", "manifest.json"), read("r2", "manifest.json"));
    assert_eq!(read("r1", "coeffs.csv"), read("r2", "coeffs.csv"));
    let (h1, h3) = (json(&tmp.path().join("r1/manifest.json")), json(&tmp.path().join("r3/manifest.json")));
    assert_ne!(h1["config_sha256"], h3["config_sha256"]);
    assert_eq!(h3["seed"], 6);
    assert_ne!(read("r1", "coeffs.csv"), read("r3", "coeffs.csv"));
}
