use std::path::Path;
use std::process::{Command, Output};

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn cglblow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cglblow")).args(args).output().expect("binary runs")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn missing_output_dir_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\n");
    let out = cglblow(&["verify-spectral", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output_dir"));
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("output_dir = \"{}\"\n[params]\nsigma = 1.0\n", tmp.path().join("o").display());
    let cfg = write_config(tmp.path(), &body);
    let out = cglblow(&["verify-spectral", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_override_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("output_dir = \"{}\"\n", tmp.path().join("o").display());
    let cfg = write_config(tmp.path(), &body);
    let out = cglblow(&["verify-spectral", "--config", cfg.to_str().unwrap(), "--set", "params.p=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.p"));
}

#[test]
fn spectral_suite_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("spectral");
    let body = format!("output_dir = \"{}\"\n", out_dir.display());
    let cfg = write_config(tmp.path(), &body);
    let out = cglblow(&["verify-spectral", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir);
    assert_eq!(s["mode"], "verify-spectral");
    assert_eq!(s["criteria"]["ac01_hermite_orthogonality"], true);
    assert!(s["orthogonality_max_error"].as_f64().unwrap() < 1e-8);
    assert!(out_dir.join("plots/jordan_residuals.csv").exists());
}

#[test]
fn single_cell_sweep_writes_one_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let body = format!(
        "output_dir = \"{}\"\n[params]\ngamma = 0.5\n[mesh]\nnodes = 1024\n[time]\ns0 = 12.0\ns_max = 14.0\n[sweep]\npoints_per_axis = 1\nrefine = false\n",
        out_dir.display()
    );
    let cfg = write_config(tmp.path(), &body);
    let out = cglblow(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    let traces: Vec<_> = std::fs::read_dir(out_dir.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    let s = summary(&out_dir);
    assert_eq!(s["cells"].as_array().unwrap().len(), 1);
    assert_eq!(s["config"]["params"]["gamma"], 0.5);
}
