use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use primesim::scenario::ScenarioSpec;

const SMALL: &str = r#"{
    "version": 1,
    "name": "small",
    "seed": 3,
    "custom": true,
    "topology": {"tiers": 2, "hosts": 16, "switch_ports": 8},
    "link": {"bandwidth_gbps": 400, "delay_ns": 600},
    "traffic": {"pattern": "permutation", "flow_bytes": 262144},
    "measurement": {"queue_sample_ns": 2000, "port_bytes": true}
}"#;

fn primesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_primesim"))
        .args(args)
        .env_remove("PRIMESIM_SEED")
        .env_remove("PRIMESIM_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> bytes for every file under `dir` except the manifest.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn checked_in_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") && !p.file_name().unwrap().to_string_lossy().starts_with("sweep") {
            let out = primesim(&["validate", "--scenario", s(&p)]);
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn unknown_balancer_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "bad.json", &SMALL.replace("\"traffic\"", "\"balancer\": {\"sprayed\": \"LETFLOW\"}, \"traffic\""));
    let out = primesim(&["validate", "--scenario", s(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"], "invalid_config");
    assert_eq!(e["field"], "balancer.sprayed");
}

#[test]
fn semantic_violations_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "\"traffic\"",
        "\"entropy_parts\": 2, \"impairments\": [{\"kind\": \"degrade_random\", \"fraction_of_links\": 1.2, \"to_gbps\": 100}], \"traffic\"",
    );
    let p = write(tmp.path(), "bad.json", &text);
    let out = primesim(&["validate", "--scenario", s(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    let fields: Vec<&str> = e["violations"].as_array().unwrap().iter().map(|v| v["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"entropy_parts"), "{fields:?}");
    assert!(fields.iter().any(|f| f.starts_with("impairments")), "{fields:?}");
}

#[test]
fn run_writes_the_bundle_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "small.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = primesim(&["run", "--scenario", s(&p), "--seed", "7", "--out", s(dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["manifest.json", "summary.csv", "flows.csv", "queues.csv", "ports.csv", "port_bytes.csv", "figdata/flow_ratio.csv", "figdata/queue_cdf.csv"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["input_sha256"].as_str().unwrap().len(), 64);
    assert!(m["duration_s"].is_number());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn cli_and_library_outputs_match() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "small.json", SMALL);
    let cli = tmp.path().join("cli");
    let out = primesim(&["run", "--scenario", s(&p), "--out", s(&cli)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lib = tmp.path().join("lib");
    ScenarioSpec::from_json(SMALL).unwrap().run(None).unwrap().write_dir(&lib).unwrap();
    assert_eq!(tree(&cli), tree(&lib));
}

#[test]
fn seed_and_output_root_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "small.json", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_primesim"))
        .args(["run", "--scenario", s(&p)])
        .env("PRIMESIM_SEED", "11")
        .env("PRIMESIM_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = std::fs::read_to_string(tmp.path().join("root/small/manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&m).unwrap();
    assert_eq!(m["seed"], 11);
}

#[test]
fn deadline_exceeded_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "small.json", SMALL);
    let dir = tmp.path().join("out");
    let out = primesim(&["run", "--scenario", s(&p), "--out", s(&dir), "--deadline", "0.000001"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["error"], "deadline_exceeded");
    assert_eq!(e["residuals"].as_array().unwrap().len(), 16);
    // The manifest still records the attempt.
    assert!(std::fs::read_to_string(dir.join("manifest.json")).unwrap().contains("incomplete"));
}

fn matrix(base: &str, balancers: &str) -> String {
    format!(
        r#"{{"version": 1, "base": {base}, "bandwidths_gbps": [400], "flow_mib": [1],
            "balancers": {balancers}, "seeds": [1, 2]}}"#
    )
}

#[test]
fn sweep_is_independent_of_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "m.json", &matrix(SMALL, r#"["PRIME", "CO_PRIME", "REPS", "AR"]"#));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let out = primesim(&["sweep", "--matrix", s(&p), "--jobs", jobs, "--out", s(dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(tree(&a), tree(&b));
    let rows = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 8);
    assert_eq!(std::fs::read_to_string(a.join("figdata/ratio.csv")).unwrap().lines().count(), 1 + 4);
}

#[test]
fn sweep_fails_when_a_cell_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let base = SMALL.replace("\"traffic\"", "\"deadline_ns\": 1000, \"traffic\"");
    let p = write(tmp.path(), "m.json", &matrix(&base, r#"["PRIME"]"#));
    let out = primesim(&["sweep", "--matrix", s(&p), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "sweep_cells_failed");
}

#[test]
fn empty_sweep_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "m.json", &matrix(SMALL, "[]"));
    let out = primesim(&["sweep", "--matrix", s(&p), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "invalid_config");
}
