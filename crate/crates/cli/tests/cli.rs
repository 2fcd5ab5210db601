//! End-to-end checks of the binary contract: exit codes, output precedence,
//! artifact determinism under parallelism, and the schema gate.

use std::path::Path;
use std::process::{Command, Output};

fn wavelab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wavelab"));
    cmd.env_remove("WAVELAB_OUT");
    cmd
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn passing_config(out_dir: Option<&Path>) -> String {
    let output = match out_dir {
        Some(d) => format!(r#""output": {{"dir": {:?}}},"#, d.to_str().unwrap()),
        None => String::new(),
    };
    format!(
        r#"{{
          "name": "pulse",
          "spacetime": {{"preset": "minkowski", "lengths": [6.283185307179586], "t_min": 0.0, "t_max": 1.2}},
          "grid": {{"nt": 65, "nx": [48]}},
          "scenario": {{"kind": "cauchy"}},
          "data": {{
            "u0": {{"profile": "gaussian", "center": [3.0], "width": 0.7}},
            "u1": {{"profile": "zero"}}
          }},
          {output}
          "checks": [
            {{"name": "interior_residual", "tolerance": 1e-11}},
            {{"name": "cone_leakage", "tolerance": 1e-8}}
          ]
        }}"#
    )
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "pulse.json", &passing_config(None));
    let out = tmp.path().join("out");
    let result = wavelab().arg("run").arg(&config).arg("--out").arg(&out).output().unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["interior_residual", "cone_leakage"]);
    for c in checks {
        assert!(c["value"].is_number());
        assert!(c["tolerance"].is_number());
        assert!(c["pass"].as_bool().unwrap());
    }
    assert!(report["grid"]["dt"].is_number());
    assert_eq!(report["artifacts"], serde_json::json!(["solution.csv"]));
    assert!(out.join("solution.csv").is_file());

    let text = stdout_of(&result);
    assert!(text.contains("[PASS] pulse: interior_residual"), "{text}");
    assert!(text.contains("pulse: PASS (2/2 checks"), "{text}");
}

#[test]
fn failing_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let body = passing_config(None).replace("\"tolerance\": 1e-11", "\"tolerance\": 1e-30");
    let config = write_config(tmp.path(), "pulse.json", &body);
    let result =
        wavelab().arg("run").arg(&config).arg("--out").arg(tmp.path().join("out")).output().unwrap();
    assert_eq!(result.status.code(), Some(1));
    assert!(stdout_of(&result).contains("[FAIL] pulse: interior_residual"));
}

#[test]
fn schema_violations_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let body = passing_config(None).replace("\"name\": \"pulse\"", "\"nam\": \"pulse\"");
    let config = write_config(tmp.path(), "typo.json", &body);
    let result =
        wavelab().arg("run").arg(&config).arg("--out").arg(tmp.path().join("out")).output().unwrap();
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("config error"));
}

#[test]
fn blow_up_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let body = passing_config(None).replace("\"width\": 0.7", "\"width\": 0.7, \"amplitude\": 1e308");
    let config = write_config(tmp.path(), "blowup.json", &body);
    let result =
        wavelab().arg("run").arg(&config).arg("--out").arg(tmp.path().join("out")).output().unwrap();
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("non-finite"));
}

#[test]
fn missing_config_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let result = wavelab()
        .arg("run")
        .arg(tmp.path().join("absent.json"))
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(4));
}

#[test]
fn out_precedence_is_flag_env_config_default() {
    let tmp = tempfile::tempdir().unwrap();
    let config_dir = tmp.path().join("from-config");
    let config = write_config(tmp.path(), "pulse.json", &passing_config(Some(&config_dir)));
    let env_dir = tmp.path().join("from-env");
    let flag_dir = tmp.path().join("from-flag");

    // config dir only
    let r = wavelab().arg("run").arg(&config).current_dir(tmp.path()).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(config_dir.join("report.json").is_file());

    // env beats config
    let r = wavelab()
        .arg("run")
        .arg(&config)
        .env("WAVELAB_OUT", &env_dir)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(env_dir.join("report.json").is_file());

    // flag beats env
    let r = wavelab()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&flag_dir)
        .env("WAVELAB_OUT", tmp.path().join("ignored"))
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(flag_dir.join("report.json").is_file());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn parallel_batches_write_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "alpha.json", &passing_config(None));
    let b_body = passing_config(None)
        .replace("\"center\": [3.0]", "\"center\": [1.5]")
        .replace("\"name\": \"pulse\"", "\"name\": \"shifted\"");
    let b = write_config(tmp.path(), "beta.json", &b_body);

    for (dir, jobs) in [("serial", "1"), ("parallel", "2")] {
        let r = wavelab()
            .arg("run")
            .args([&a, &b])
            .arg("--out")
            .arg(tmp.path().join(dir))
            .args(["--format", "both", "--jobs", jobs])
            .output()
            .unwrap();
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for sub in ["alpha", "beta"] {
        for file in ["report.json", "solution.csv", "solution.wvlb"] {
            let serial = std::fs::read(tmp.path().join("serial").join(sub).join(file)).unwrap();
            let parallel = std::fs::read(tmp.path().join("parallel").join(sub).join(file)).unwrap();
            assert_eq!(serial, parallel, "{sub}/{file} differs between --jobs 1 and --jobs 2");
        }
    }
}

#[test]
fn check_reports_are_reproducible_and_gate_the_exit_code() {
    let first = wavelab().args(["check", "sections", "--seed", "7"]).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let second = wavelab().args(["check", "sections", "--seed", "7"]).output().unwrap();
    assert_eq!(first.stdout, second.stdout);

    let other = wavelab().args(["check", "sections", "--seed", "8"]).output().unwrap();
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(first.stdout, other.stdout);

    let unknown = wavelab().args(["check", "nsections"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn green_subcommand_reports_a_clean_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "stage.json", &passing_config(None));
    let out = tmp.path().join("green");
    let r = wavelab()
        .args(["green", "--config"])
        .arg(&config)
        .args(["--point", "0.6,3.0", "--direction", "-", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let text = stdout_of(&r);
    assert!(text.contains("kernel_cone_violations: 0"), "{text}");
    assert!(text.contains("retarded"), "{text}");
    assert!(out.join("kernel_c0.csv").is_file());
}

#[test]
fn causal_subcommand_rasters_cones_from_the_flag_descriptor() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "stage.json", &passing_config(None));
    let out = tmp.path().join("causal");
    let r = wavelab()
        .args(["causal", "--config"])
        .arg(&config)
        .args(["--set", "ball=0.2,3.0,0.5", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("future.csv").is_file());
    assert!(out.join("past.csv").is_file());

    let missing = wavelab().args(["causal", "--config"]).arg(&config).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
