use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dramlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dramlab"))
        .current_dir(dir)
        .env_remove("DRAMLAB_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_ok(dir: &Path, args: &[&str]) -> Value {
    let out = dramlab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    dramlab(dir, args).status.code().expect("exit code")
}

#[test]
fn synth_profile_and_solar_sim() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let chip = json_ok(d, &["--seed", "5", "chip", "synth", "--manufacturer", "C", "--type-node", "lpddr4-1y", "--out", "c.json"]);
    assert_eq!(chip["banks"], 8);
    let prof = json_ok(d, &["profile", "build", "--chip", "c.json", "--out", "p.json", "--ground-truth"]);
    assert_eq!(prof["weak_columns"], chip["weak_columns"]);
    let sim = json_ok(
        d,
        &["solar", "sim", "--chip", "c.json", "--profile", "p.json", "--synthetic", "first-cacheline-biased", "--requests", "300"],
    );
    assert_eq!(sim["requests"], 1200);
    assert_eq!(sim["corrupted_reads"], 0);
    assert!(sim["reduced_fraction"].as_f64().unwrap() > 0.5);
    assert!(sim["total_cycles"].as_u64().unwrap() <= sim["baseline_cycles"].as_u64().unwrap());
}

#[test]
fn measured_profile_is_safe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    json_ok(d, &["chip", "synth", "--manufacturer", "B", "--type-node", "lpddr4-1x", "--out", "c.json"]);
    let prof = json_ok(d, &["profile", "build", "--chip", "c.json", "--out", "p.json"]);
    assert!(prof["iterations"].as_u64().unwrap() > 0);
    let sim = json_ok(d, &["solar", "sim", "--chip", "c.json", "--profile", "p.json", "--requests", "500"]);
    assert_eq!(sim["corrupted_reads"], 0);
}

#[test]
fn puf_enroll_then_authenticate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    json_ok(d, &["chip", "synth", "--out", "a.json"]);
    json_ok(d, &["--seed", "2", "chip", "synth", "--out", "b.json"]);
    let e = json_ok(d, &["puf", "enroll", "--chip", "a.json", "--device", "dev", "--segments", "0,1,2,3", "--temperatures", "50,60", "--keys", "k.json"]);
    assert_eq!(e["enrolled"], 8);
    let same = json_ok(d, &["puf", "auth", "--chip", "a.json", "--device", "dev", "--segment", "2", "--temperature", "58", "--keys", "k.json"]);
    assert_eq!(same["outcome"], "accept");
    let other = json_ok(d, &["puf", "auth", "--chip", "b.json", "--device", "dev", "--segment", "2", "--keys", "k.json"]);
    assert_eq!(other["outcome"], "reject");
    let unknown = json_ok(d, &["puf", "auth", "--chip", "a.json", "--device", "dev", "--segment", "9", "--keys", "k.json"]);
    assert_eq!(unknown["outcome"], "unknown_segment");
    assert!(unknown["jaccard"].is_null());
}

#[test]
fn rng_generate_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    json_ok(d, &["--seed", "2", "chip", "synth", "--manufacturer", "B", "--type-node", "lpddr4-1x", "--out", "c.json"]);
    let prof = json_ok(d, &["profile", "build", "--chip", "c.json", "--out", "p.json", "--ground-truth", "--rng"]);
    assert!(prof["rng_cells"].as_u64().unwrap() > 0);
    let g = json_ok(d, &["rng", "gen", "--chip", "c.json", "--profile", "p.json", "--bits", "100000", "--banks", "4", "--out", "r.bin"]);
    assert_eq!(g["bits"], 100000);
    assert_eq!(std::fs::metadata(d.join("r.bin")).unwrap().len(), 12500);
    let t = json_ok(d, &["rng", "test", "--in", "r.bin"]);
    assert_eq!(t["all_pass"], true);
    // Asking for more banks than the profile covers is refused.
    assert_eq!(code(d, &["rng", "gen", "--chip", "c.json", "--profile", "p.json", "--bits", "10", "--banks", "99", "--out", "x.bin"]), 1);
}

#[test]
fn mitigation_reports_and_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    json_ok(d, &["chip", "synth", "--out", "c.json"]);
    let none = json_ok(d, &["rh", "mitigate", "--chip", "c.json", "--mechanism", "none", "--hc-first", "2000", "--attack-ms", "8"]);
    assert!(none["flips"].as_u64().unwrap() > 0);
    let ideal = json_ok(d, &["rh", "mitigate", "--chip", "c.json", "--mechanism", "ideal", "--hc-first", "2000", "--attack-ms", "8"]);
    assert_eq!(ideal["flips"], 0);
    assert!(ideal["mitigation_refreshes"].as_u64().unwrap() > 0);
    assert_eq!(code(d, &["rh", "mitigate", "--chip", "c.json", "--mechanism", "twice", "--hc-first", "2000", "--attack-ms", "1"]), 3);
    assert_eq!(
        code(d, &["rh", "mitigate", "--chip", "c.json", "--mechanism", "increased_refresh", "--hc-first", "2000", "--attack-ms", "1"]),
        3
    );
    // ProHIT has no default tables.
    assert_eq!(code(d, &["rh", "mitigate", "--chip", "c.json", "--mechanism", "prohit", "--hc-first", "2000", "--attack-ms", "1"]), 2);
    let p = json_ok(
        d,
        &["rh", "mitigate", "--chip", "c.json", "--mechanism", "prohit", "--hc-first", "2000", "--attack-ms", "1", "--prohit", "4,8,0.05,0.5,0.5"],
    );
    assert_eq!(p["mechanism"], "prohit");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["bogus"]), 2);
    assert_eq!(code(d, &["chip", "synth"]), 2);
    assert_eq!(code(d, &["chip", "synth", "--manufacturer", "Z", "--out", "c.json"]), 2);
    json_ok(d, &["chip", "synth", "--out", "c.json"]);
    json_ok(d, &["profile", "build", "--chip", "c.json", "--out", "p.json", "--ground-truth"]);
    assert_eq!(code(d, &["solar", "sim", "--chip", "c.json", "--profile", "p.json", "--synthetic", "zigzag"]), 2);
    assert_eq!(code(d, &["solar", "sim", "--chip", "missing.json", "--profile", "p.json"]), 4);
    std::fs::write(d.join("bad.json"), "not json").unwrap();
    assert_eq!(code(d, &["solar", "sim", "--chip", "c.json", "--profile", "bad.json"]), 4);
    // A flipped byte in the body breaks the checksum.
    let text = std::fs::read_to_string(d.join("p.json")).unwrap();
    let tampered = text.replacen("\"chip_seed\": 1,", "\"chip_seed\": 7,", 1);
    assert_ne!(text, tampered);
    std::fs::write(d.join("t.json"), tampered).unwrap();
    assert_eq!(code(d, &["solar", "sim", "--chip", "c.json", "--profile", "t.json"]), 4);
    // A profile for another geometry is a configuration error.
    json_ok(d, &["chip", "synth", "--manufacturer", "B", "--type-node", "lpddr4-1x", "--out", "l.json"]);
    assert_eq!(code(d, &["solar", "sim", "--chip", "l.json", "--profile", "p.json"]), 2);
    assert_eq!(code(d, &["report", "--config", "missing.json"]), 4);
    std::fs::write(d.join("cfg.json"), r#"{"name": "x", "manufacturer": "A", "type_node": "ddr4-new", "seeds": [1], "colour": 1}"#).unwrap();
    assert_eq!(code(d, &["report", "--config", "cfg.json"]), 2);
}

const REPORT_CONFIG: &str = r#"{
    "name": "cli",
    "manufacturer": "A",
    "type_node": "ddr4-new",
    "seeds": [1, 2],
    "solar": {
        "modes": ["baseline", "solar"],
        "traces": [{"kind": "streaming", "cores": 2, "requests_per_core": 200, "gap_ns": 10}],
        "safety_accesses": 2000
    },
    "mitigation": {"mechanisms": ["para", "ideal"], "hc_first": [32000], "attack_ms": 1.0, "sim_attack_requests": 500}
}"#;

#[test]
fn report_honours_output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), REPORT_CONFIG).unwrap();
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_dramlab"));
        c.current_dir(d).env_remove("DRAMLAB_OUT").args(args);
        if let Some(v) = env {
            c.env("DRAMLAB_OUT", v);
        }
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let v = run(Some("env_out"), &["report", "--config", "cfg.json"]);
    assert_eq!(v["files"].as_array().unwrap().len(), 2);
    let solar = std::fs::read_to_string(d.join("env_out/cli_solar.csv")).unwrap();
    assert!(solar.starts_with("config_hash,seed,"));
    assert_eq!(solar.lines().count(), 1 + 2 * 2);
    assert!(d.join("env_out/cli_mitigation.csv").exists());

    run(Some("env_out"), &["--threads", "1", "report", "--config", "cfg.json", "--out-dir", "flag_out"]);
    assert_eq!(std::fs::read(d.join("flag_out/cli_solar.csv")).unwrap(), solar.as_bytes());

    run(None, &["report", "--config", "cfg.json"]);
    assert!(d.join("dramlab-out/cli_solar.csv").exists());
}
