use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use polymicro::io::{sha256_file, ManifestLog};

fn polymicro(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polymicro"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = polymicro(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn scenario(dir: &Path) -> String {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, "seed = 11\nn_markets = 3\nhorizon_secs = 3600.0\n").unwrap();
    p.display().to_string()
}

fn run_chain(out: &Path, scen: &str) {
    ok(out, &["simulate", "--scenario", scen]);
    ok(out, &["infer", "--rule", "loose"]);
    ok(out, &["calibrate", "--rule", "loose", "--resamples", "200"]);
}

/// Hash of every artifact under `dir` except the manifest log.
fn artifact_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifests.jsonl") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, sha256_file(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulate_infer_calibrate_chains_three_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_chain(&out, &scenario(tmp.path()));
    let log = ManifestLog::at(out.join("manifests.jsonl"));
    assert_eq!(log.verify().unwrap(), 3);
    let entries = log.entries().unwrap();
    let cmds: Vec<&str> = entries.iter().map(|m| m.command.as_str()).collect();
    assert_eq!(cmds, ["simulate", "infer", "calibrate"]);
    // each stage consumes what the previous one produced
    let produced: Vec<&str> = entries[1].outputs.iter().map(|a| a.sha256.as_str()).collect();
    assert!(entries[2].inputs.iter().any(|a| produced.contains(&a.sha256.as_str())));
    assert!(entries.iter().all(|m| m.effective_config["run"]["paths"]["out_dir"].is_string()));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("calibration_inferred_loose.json")).unwrap()).unwrap();
    assert_eq!(summary["pooled"]["agreement"], 1.0);
}

#[test]
fn onchain_measures_without_fills_is_no_trades() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    std::fs::create_dir_all(out.join("fills")).unwrap();
    let o = polymicro(&out, &["measures", "--source", "onchain"]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "NoTrades");
    assert!(!out.join("manifests.jsonl").exists());
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "sample_step = -1.0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polymicro"))
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap(), "report"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = scenario(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run_chain(out, &scen);
        ok(out, &["measures", "--source", "onchain"]);
        ok(out, &["sf"]);
        ok(out, &["report"]);
    }
    let (ha, hb) = (artifact_hashes(&a), artifact_hashes(&b));
    assert!(ha.len() > 10, "{ha:?}");
    assert_eq!(ha, hb);
}
