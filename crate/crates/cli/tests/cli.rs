use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn davydov(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_davydov"))
        .args(args)
        .current_dir(cwd)
        .env("DAVYDOV_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn spin_boson(t_final: f64) -> Value {
    json!({
        "model": { "type": "spin_boson", "delta": -0.1, "alpha": 0.1, "s": 0.25, "modes": 2 },
        "multiplicity": 2,
        "seed": 3,
        "integrator": { "t_final": t_final, "output_points": 21 },
        "output": { "directory": "out" }
    })
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(2.0));
    let o = davydov(&["run", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in [
        "population.csv",
        "conservation.csv",
        "modes.csv",
        "events.jsonl",
        "diagnostics.jsonl",
        "checkpoint.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let pop = read_csv(&out.join("population.csv"));
    assert_eq!(pop[0], ["t", "P_z"]);
    assert_eq!(pop.len(), 22);
    assert!((pop[1][1].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"]["status"], "completed");
    assert_eq!(manifest["config"]["model"]["alpha"], 0.1);
    assert_eq!(manifest["config"]["apoptosis"]["epsilon"], 0.05);
    let cons = read_csv(&out.join("conservation.csv"));
    for row in &cons[1..] {
        assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn manifest_reproduces_the_run_bitwise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(2.0));
    assert!(davydov(&["run", cfg.to_str().unwrap()], tmp.path()).status.success());
    let o = davydov(&["run", "out/manifest.json", "--out", "again"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["population.csv", "conservation.csv", "checkpoint.json"] {
        assert_eq!(
            fs::read(tmp.path().join("out").join(f)).unwrap(),
            fs::read(tmp.path().join("again").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn unknown_key_is_reported_with_its_line() {
    let tmp = TempDir::new().unwrap();
    let text = "{\n  \"model\": { \"type\": \"harmonic\", \"omega\": [1.0] },\n  \"multiplicity\": 1,\n  \"integrator\": { \"t_final\": 1.0, \"tfinal\": 2.0 }\n}\n";
    fs::write(tmp.path().join("bad.json"), text).unwrap();
    let o = davydov(&["run", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.json:4:"), "{err}");
    assert!(err.contains("tfinal"), "{err}");
}

#[test]
fn syntax_error_is_line_anchored() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\n  \"multiplicity\": 1,\n  \"model\": \n}\n").unwrap();
    let o = davydov(&["run", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:4:"), "{}", stderr(&o));
}

#[test]
fn invalid_physics_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut v = spin_boson(1.0);
    v["model"]["s"] = json!(-1.0);
    let cfg = write_config(tmp.path(), "sb.json", &v);
    let o = davydov(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn dotted_overrides_reach_any_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(1.0));
    let o = davydov(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--set",
            "model.alpha=0.05",
            "--set",
            "apoptosis.enabled=false",
            "--set",
            "output.directory=elsewhere",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("elsewhere/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["model"]["alpha"], 0.05);
    assert_eq!(m["config"]["apoptosis"]["enabled"], false);

    let o = davydov(&["run", cfg.to_str().unwrap(), "--set", "model.alpah=0.05"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpah"));
}

#[test]
fn aborted_run_flushes_outputs_and_fails() {
    let tmp = TempDir::new().unwrap();
    let mut v = spin_boson(2.0);
    v["integrator"]["max_steps"] = json!(3);
    let cfg = write_config(tmp.path(), "sb.json", &v);
    let o = davydov(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"]["status"], "aborted");
    assert_eq!(m["status"]["kind"], "step_budget");
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(events.lines().last().unwrap().contains("\"abort\""));
    assert!(read_csv(&out.join("population.csv")).len() >= 2);
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(2.0));
    assert!(davydov(&["run", cfg.to_str().unwrap()], tmp.path()).status.success());
    let o = davydov(
        &["resume", "out/checkpoint.json", "--set", "integrator.t_final=4.0", "--set", "integrator.output_points=41"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pop = read_csv(&tmp.path().join("out/population.csv"));
    assert_eq!(pop[0], ["t", "P_z"]);
    let times: Vec<f64> = pop[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(times.len(), 41);
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!((times[40] - 4.0).abs() < 1e-12);

    // A straight run to t = 4 agrees to integrator tolerance.
    let mut v = spin_boson(4.0);
    v["integrator"]["output_points"] = json!(41);
    v["output"]["directory"] = json!("straight");
    let cfg = write_config(tmp.path(), "long.json", &v);
    assert!(davydov(&["run", cfg.to_str().unwrap()], tmp.path()).status.success());
    let straight = read_csv(&tmp.path().join("straight/population.csv"));
    for (a, b) in pop[1..].iter().zip(&straight[1..]) {
        let d = (a[1].parse::<f64>().unwrap() - b[1].parse::<f64>().unwrap()).abs();
        assert!(d < 1e-6, "{d}");
    }
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "resume");
    assert_eq!(m["resumed_from"]["time"], 2.0);
}

#[test]
fn sweep_against_itself_is_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(1.0));
    let o = davydov(&["sweep", cfg.to_str().unwrap(), "--axis", "m", "--values", "2", "--out", "sw"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&tmp.path().join("sw/sweep.csv"));
    assert_eq!(rows[0], ["value", "delta", "status"]);
    assert_eq!(rows[1], ["2", "0", "completed"]);
}

#[test]
fn sweep_over_multiplicity_uses_the_largest_as_reference() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sb.json", &spin_boson(3.0));
    let o = davydov(&["sweep", cfg.to_str().unwrap(), "--axis", "m", "--values", "1,2,3", "--out", "sw"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&tmp.path().join("sw/sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][1], "0");
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.0);
    for v in ["M_1", "M_2", "M_3"] {
        assert!(tmp.path().join("sw").join(v).join("population.csv").exists());
    }
}

#[test]
fn alpha_axis_needs_spin_boson() {
    let tmp = TempDir::new().unwrap();
    let v = json!({
        "model": { "type": "harmonic", "omega": [1.0] },
        "multiplicity": 1,
        "integrator": { "t_final": 1.0 }
    });
    let cfg = write_config(tmp.path(), "h.json", &v);
    let o = davydov(&["sweep", cfg.to_str().unwrap(), "--axis", "alpha", "--values", "0.1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn holstein_run_and_spectrum() {
    let tmp = TempDir::new().unwrap();
    let v = json!({
        "model": {
            "type": "holstein", "sites": 4, "hopping": 0.1, "bandwidth": 0.1,
            "coupling": { "kind": "per_mode", "g": 0.3 }
        },
        "multiplicity": 2,
        "integrator": { "t_final": 30.0, "output_points": 301 },
        "output": { "directory": "h" }
    });
    let cfg = write_config(tmp.path(), "h.json", &v);
    let o = davydov(&["run", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dens = read_csv(&tmp.path().join("h/density.csv"));
    assert_eq!(dens[0], ["t", "n", "rho_nn"]);
    assert_eq!(dens.len(), 1 + 301 * 4);
    let labels: Vec<&str> = dens[1..5].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(labels, ["-1", "0", "1", "2"]);
    let trace: f64 = dens[1..5].iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((trace - 1.0).abs() < 1e-6);

    let o = davydov(&["spectrum", "h"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = read_csv(&tmp.path().join("h/spectrum.csv"));
    assert_eq!(spec[0], ["omega", "F", "poisson"]);
    assert_eq!(spec.len(), 1 + 301 * 8);
    let fit: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("h/spectrum_fit.json")).unwrap()).unwrap();
    assert!((fit["huang_rhys"].as_f64().unwrap() - 0.36).abs() < 1e-12);
}

#[test]
fn shipped_presets_are_valid() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut seen = 0;
    for entry in fs::read_dir(&presets).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        seen += 1;
        let tmp = TempDir::new().unwrap();
        let o = davydov(
            &[
                "run",
                path.to_str().unwrap(),
                "--set",
                "integrator.t_final=0.02",
                "--set",
                "integrator.output_points=2",
                "--out",
                tmp.path().join("out").to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
    }
    assert!(seen >= 3);
}
