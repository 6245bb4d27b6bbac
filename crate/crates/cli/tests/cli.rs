use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qrlab(config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    fs::write(cfg.path(), config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_qrlab"))
        .arg("--config")
        .arg(cfg.path())
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("QRLAB_OUT")
        .env_remove("QRLAB_CONFIG")
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

/// Every file in the directory is listed with a correct hash, and nothing else is.
fn assert_manifest_complete(out: &Path) {
    let m = manifest(out);
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        let out = Command::new("sha256sum").arg(out.join(a["path"].as_str().unwrap())).output();
        if let Ok(o) = out {
            let hex = String::from_utf8_lossy(&o.stdout).split_whitespace().next().unwrap_or("").to_string();
            assert_eq!(hex, a["sha256"].as_str().unwrap());
        }
        assert_eq!(bytes.len() as u64, a["bytes"].as_u64().unwrap());
    }
    let mut on_disk: Vec<String> =
        fs::read_dir(out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).filter(|n| n != "manifest.json").collect();
    on_disk.sort();
    let mut listed: Vec<String> = listed.into_iter().map(String::from).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
}

const F2_SWEEP: &str = r#"
kind = "distortion-sweep"
seed = 4

[map]
kind = "multi-twist"
a = 2

[sample]
points = 50
"#;

#[test]
fn distortion_sweep_of_f2_stays_below_bound() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sweep");
    let o = qrlab(F2_SWEEP, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("distortion.csv"));
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let h: f64 = r[5].parse().unwrap();
        assert!((1.0..=2.1).contains(&h), "{h}");
    }
    assert_manifest_complete(&out);
}

#[test]
fn julia_depth_zero_gives_a_contained_cloud() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("julia");
    let o = qrlab("kind = \"julia\"\n[julia]\ndepth = 0\n", &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("julia.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.last().unwrap() == "CONFORMAL_BALL"));
    assert_manifest_complete(&out);
}

#[test]
fn empty_grid_is_a_schema_error_without_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("empty");
    let cfg = "kind = \"distortion-sweep\"\n[map]\nkind = \"multi-twist\"\na = 2\n[distortion]\nradii = []\n";
    assert_eq!(qrlab(cfg, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(qrlab("kind = \"tukia-build\"\n[tukia]\ngrid = 0\n", &out, &[]).status.code(), Some(2));
    assert_eq!(qrlab("kind = \"julia\"\nunknown = true\n", &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = qrlab("kind = \"julia\"\n[julia]\ndepth = 1\n", &blocker.join("sub"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

const PANSU: &str = r#"
kind = "pansu-sweep"
seed = 9

[map]
kind = "multi-twist"
a = 2

[sample]
points = 12
"#;

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(qrlab(PANSU, &a, &["--threads", "1"]).status.success());
    assert!(qrlab(PANSU, &b, &[]).status.success());
    for f in ["pansu.csv", "summary.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_manifest_complete(&a);
    for r in csv_rows(&a.join("pansu.csv")) {
        let (tau, det, h): (f64, f64, f64) = (r[9].parse().unwrap(), r[10].parse().unwrap(), r[11].parse().unwrap());
        assert!((tau - det).abs() < 1e-3 && h <= 2.02);
    }
}

#[test]
fn up_to_date_runs_are_skipped_and_damaged_ones_redone() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p");
    assert!(qrlab(PANSU, &out, &[]).status.success());
    let original = fs::read(out.join("pansu.csv")).unwrap();
    fs::write(out.join("pansu.csv"), "damaged").unwrap();
    assert!(qrlab(PANSU, &out, &[]).status.success());
    assert_eq!(fs::read(out.join("pansu.csv")).unwrap(), original);
    let o = qrlab(PANSU, &out, &["--verbose"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("up to date"));
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "kind = \"julia\"\n[julia]\ndepth = 1\n").unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_qrlab")).env("QRLAB_CONFIG", &cfg).env("QRLAB_OUT", &out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn broken_tolerance_fails_certification_with_measured_value() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cert");
    let cfg = "kind = \"certify-all\"\n[certify]\ncriteria = [2]\n[certify.tolerances]\nh_bound = 1.0\n[certify.sizes]\neigen_points = 50\nmetric_points = 2\n";
    let o = qrlab(cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("certify.json")).unwrap()).unwrap();
    let c = &report["report"]["criteria"][0];
    assert_eq!(c["pass"], Value::Bool(false));
    assert!((c["measured"]["eigen_h_max"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(manifest(&out)["status"], "numerical-failure");
    assert_manifest_complete(&out);
}

#[test]
fn rotation_only_certification_passes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("rot");
    let cfg = "kind = \"certify-all\"\n[certify]\na = 1\npullback_degrees = [1]\ncriteria = [1, 2, 7]\n[certify.sizes]\npullback_points = 50\neigen_points = 50\nmetric_points = 2\npansu_points = 5\n";
    let o = qrlab(cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("certify.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["all_pass"], Value::Bool(true));
}

#[test]
fn trap_and_tukia_builds_write_their_artifacts() {
    let tmp = TempDir::new().unwrap();
    let trap = tmp.path().join("trap");
    let o = qrlab("kind = \"trap-build\"\n[sample]\npoints = 10\n", &trap, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(csv_rows(&trap.join("orbits.csv")).iter().all(|r| r[7] == "true"));
    let tukia = tmp.path().join("tukia");
    let o = qrlab("kind = \"tukia-build\"\n[tukia]\ngrid = 4\nrefine = true\n", &tukia, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&fs::read_to_string(tukia.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["grids"].as_array().unwrap().len(), 2);
    let structure: Value = serde_json::from_str(&fs::read_to_string(tukia.join("structure.json")).unwrap()).unwrap();
    assert_eq!(structure["schema_version"], 1);
    assert_manifest_complete(&tukia);
}
