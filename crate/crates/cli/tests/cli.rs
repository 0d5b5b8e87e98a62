use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL_LOCK: &str = r#"{
  "schema": "hhsim-experiment/1",
  "name": "small_lock",
  "b0_gauss": 128.0,
  "bath": { "density_ppm": 50.0, "n_spins": 3, "seed": 5 },
  "protocol": {
    "kind": "spin-lock",
    "lock_us": 10.0,
    "rf": { "mode": "five-line", "omega_mhz": 8.0 },
    "t1rho_us": null
  },
  "sweep": { "parameter": "lock_us", "values": [0.0, 2.0, 5.0, 10.0] },
  "n_realizations": 8,
  "with_rf_off_reference": true
}
"#;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("sim runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_traces_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lock.json", SMALL_LOCK);
    let out_dir = dir.path().join("a");
    let out = sim(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--plot"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(stdout_json(&out), manifest);
    assert_eq!(manifest["schema"], "hhsim-manifest/1");
    assert_eq!(manifest["config_sha256"], hex_digest(SMALL_LOCK.as_bytes()));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["n_realizations"], 8);
    let files: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["trace_rf_on.csv", "trace_rf_off.csv", "plot.svg"]);
    for o in manifest["outputs"].as_array().unwrap() {
        let bytes = fs::read(out_dir.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], hex_digest(&bytes));
    }
    let csv = fs::read_to_string(out_dir.join("trace_rf_on.csv")).unwrap();
    assert!(csv.starts_with("sweep_value,mean,stderr\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(!csv.contains('\r'));
}

#[test]
fn reruns_are_byte_identical_across_workers_and_line_endings() {
    let dir = tempfile::tempdir().unwrap();
    let lf = write(dir.path(), "lf.json", SMALL_LOCK);
    let crlf = write(dir.path(), "crlf.json", &SMALL_LOCK.replace('\n', "\r\n"));
    let mut runs = Vec::new();
    for (cfg, workers, sub) in [(&lf, "1", "r1"), (&lf, "3", "r2"), (&crlf, "2", "r3")] {
        let out_dir = dir.path().join(sub);
        let out = sim(&["run", cfg, "--out", out_dir.to_str().unwrap(), "--workers", workers, "--seed", "17"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let m = stdout_json(&out);
        assert_eq!(m["seed"], 17);
        runs.push((
            m["config_sha256"].as_str().unwrap().to_string(),
            fs::read(out_dir.join("trace_rf_on.csv")).unwrap(),
            fs::read(out_dir.join("trace_rf_off.csv")).unwrap(),
        ));
    }
    assert!(runs.windows(2).all(|w| w[0] == w[1]));

    let other = dir.path().join("r4");
    assert_eq!(code(&sim(&["run", &lf, "--out", other.to_str().unwrap(), "--seed", "18"])), 0);
    assert_ne!(fs::read(other.join("trace_rf_on.csv")).unwrap(), runs[0].1);
}

#[test]
fn run_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    let missing = sim(&["run", dir.path().join("nope.json").to_str().unwrap(), "--out", o]);
    assert_eq!(code(&missing), 2);
    assert!(missing.stdout.is_empty());
    assert!(!missing.stderr.is_empty());

    let broken = write(dir.path(), "broken.json", "{ \"schema\": ");
    assert_eq!(code(&sim(&["run", &broken, "--out", o])), 2);
    let unknown = write(dir.path(), "unknown.json", &SMALL_LOCK.replace("\"n_realizations\"", "\"typo\": 1, \"n_realizations\""));
    assert_eq!(code(&sim(&["run", &unknown, "--out", o])), 2);
    let cfg = write(dir.path(), "ok.json", SMALL_LOCK);
    assert_eq!(code(&sim(&["run", &cfg, "--out", o, "--workers", "0"])), 2);
    assert_eq!(code(&sim(&["run", &cfg, "--out", o, "--realizations", "0"])), 2);
    assert!(!out_dir.exists());
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.json", SMALL_LOCK);
    let blocker = write(dir.path(), "file", "not a directory");
    let out = sim(&["run", &cfg, "--out", &format!("{blocker}/sub"), "--realizations", "1"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn fit_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // One Gaussian dip at 8.1 with σ = 1.5.
    let mut csv = String::from("sweep_value,mean,stderr\n");
    for k in 0..=64 {
        let x = k as f64 * 0.25;
        let y = 1.0 - 0.3 * (-(x - 8.1f64).powi(2) / (2.0 * 1.5 * 1.5)).exp();
        csv.push_str(&format!("{x:?},{y:?},0.0\n"));
    }
    let dip = write(dir.path(), "dip.csv", &csv);
    let out = sim(&["fit", &dip, "--model", "gauss"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    let c = &report["derived"]["components"][0];
    assert!((c["center"].as_f64().unwrap() - 8.1).abs() < 1e-6);
    assert!((c["fwhm"].as_f64().unwrap() - 1.5 * 2.0 * (2.0 * 2f64.ln()).sqrt()).abs() < 1e-6);
    assert_eq!(report["fit"]["converged"], true);

    let flat = write(dir.path(), "flat.csv", "sweep_value,mean,stderr\n0,1,0\n1,1,0\n2,1,0\n3,1,0\n4,1,0\n");
    assert_eq!(code(&sim(&["fit", &flat, "--model", "exp"])), 5);
    let bad = write(dir.path(), "bad.csv", "sweep_value,mean,stderr\n0,1,0\n1,x,0\n");
    assert_eq!(code(&sim(&["fit", &bad, "--model", "exp"])), 2);
    let header = write(dir.path(), "header.csv", "a,b\n0,1\n");
    assert_eq!(code(&sim(&["fit", &header, "--model", "sinusoid"])), 2);
    assert_eq!(code(&sim(&["fit", &dip, "--model", "nonsense"])), 2);
}

#[test]
fn predict_calculators() {
    let out = sim(&["predict", "--b0", "128", "--what", "p1-lines"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let lines = v["lines"].as_array().unwrap();
    assert_eq!(lines.len(), 5);
    // Oracle: γB0 with on-axis (114 MHz, 1 of 4 orientations) and off-axis
    // (90 MHz, 3 of 4) hyperfine lines, one third of spins in each mI.
    let center = 2.8 * 128.0;
    let expect = [(center - 114.0, 1.0 / 12.0), (center - 90.0, 0.25), (center, 1.0 / 3.0), (center + 90.0, 0.25), (center + 114.0, 1.0 / 12.0)];
    for (line, (f, w)) in lines.iter().zip(expect) {
        assert!((line["frequency_mhz"].as_f64().unwrap() - f).abs() < 1e-9);
        assert!((line["weight"].as_f64().unwrap() - w).abs() < 1e-12);
    }
    let lac = stdout_json(&sim(&["predict", "--what", "lac"]));
    assert!((lac["lac_field_gauss"].as_f64().unwrap() - 512.5).abs() < 1e-9);
    let budget = stdout_json(&sim(&["predict", "--what", "budget"]));
    assert_eq!(budget["cycles"], 250);
    let op = stdout_json(&sim(&["predict", "--what", "operating-point", "--b0", "132"]));
    assert_eq!(op["matched_omega_p1_mhz"], 8.0);
    assert_eq!(code(&sim(&["predict", "--what", "budget", "--transfer-us", "0", "--init-us", "0"])), 2);
}

#[test]
fn validate_bundled_configs_and_sequences() {
    let mut names: Vec<_> = fs::read_dir(configs_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for p in &names {
        let out = sim(&["validate", p.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
        let v = stdout_json(&out);
        assert_eq!(v["config_sha256"], hex_digest(fs::read_to_string(p).unwrap().replace("\r\n", "\n").as_bytes()));
    }
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "lock.seq", "channel mw target nv carrier 2511.6MHz\npulse mw pi/2 amp 8MHz phase X\nreadout p0\n");
    let v = stdout_json(&sim(&["validate", &good]));
    assert_eq!(v["pulses"], 1);
    let bad = write(dir.path(), "bad.seq", "channel mw target nv carrier 2511.6MHz\npulse mw pi/2 amp 8MHz phase Z\nreadout p0\n");
    let out = sim(&["validate", &bad]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
