use std::path::Path;
use std::process::{Command, Output};

use omt_cli::{RunManifest, EXIT_CONFIG, EXIT_INPUT};

fn omt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_IID: &str = r#"{
  "model": {"k": 200, "pi": 0.2,
            "null": [{"weight": 1.0, "mean": 0.0, "sd": 1.0}],
            "alt": [{"weight": 1.0, "mean": -2.5, "sd": 1.0}]},
  "variants": ["OMT-FDR", "OMT-pFDR", "OMT-mFDR", "oracle-BH", "BH"],
  "n_reps": 50,
  "n_cal": 500
}"#;

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_IID);
    let out = dir.path().join("out");
    let o = omt(&["simulate", "--config", &cfg, "--reps", "40", "--seed", "7", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "procedure,TP,TP_se,FDR,FDR_se,pFDR,pFDR_se,mFDR,mFDR_se,PrR0,PrR0_se"
    );
    assert_eq!(lines.count(), 5);

    let m = manifest(&out);
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, 7);
    assert_eq!(m.config_sha256.as_ref().unwrap().len(), 64);
    assert!(m.outputs.contains(&"report.csv".to_string()));
    assert!(m.error.is_none());
}

#[test]
fn simulate_is_deterministic_with_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_IID);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = omt(&["simulate", "--config", &cfg, "--seed", "3", "--workers", "1", "--out-dir", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out.join("report.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let o = omt(&["simulate", "--config", missing.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.cfg"));
}

#[test]
fn oversized_block_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "big.cfg",
        r#"{"model": {"k": 50, "pi": 0.3,
                      "dependence": {"type": "blocks", "n_blocks": 2, "block_size": 25, "rho": 0.5, "delta": -1.5}},
            "variants": ["OMT-FDR"], "n_reps": 10, "n_cal": 100}"#,
    );
    let o = omt(&["simulate", "--config", &cfg, "--seed", "1", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("block exceeds enumeration limit"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = omt(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(!o.stderr.is_empty());
}

#[test]
fn locfdr_calibrate_decide_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "model.cfg",
        r#"{"k": 6, "pi": 0.3, "dependence": {"type": "blocks", "n_blocks": 2, "block_size": 3, "rho": 0.4, "delta": -2.0}}"#,
    );
    let z = write(dir.path(), "z.csv", "z\n-3.1\n0.2\n-2.5\n1.0\n-0.4\n-4.0\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = omt(&["locfdr", "--config", &model, "--input", &z, "--seed", "1", "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(out.join("locfdr.csv")).unwrap();
    assert_eq!(t.lines().next().unwrap(), "z,locfdr");
    assert_eq!(t.lines().count(), 7);

    let o = omt(&[
        "calibrate", "--config", &model, "--criterion", "fdr", "--alpha", "0.1", "--cal-samples", "2000", "--seed", "5",
        "--out-dir", out_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let policy = out.join("policy.json");
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(p["criterion"], "fdr");
    assert_eq!(p["diagnostics"]["n_cal"], 2000);

    let o = omt(&[
        "decide", "--config", &model, "--policy", policy.to_str().unwrap(), "--input", &z, "--seed", "1", "--out-dir",
        out_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let d = std::fs::read_to_string(out.join("decisions.csv")).unwrap();
    let rows: Vec<&str> = d.lines().collect();
    assert_eq!(rows[0], "decision");
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| *r == "0" || *r == "1"));
    assert_eq!(manifest(&out).command, "decide");
}

#[test]
fn bad_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "model.cfg",
        r#"{"k": 3, "pi": 0.3, "null": [{"weight": 1.0, "mean": 0.0, "sd": 1.0}], "alt": [{"weight": 1.0, "mean": -2.0, "sd": 1.0}]}"#,
    );
    let out = dir.path().to_str().unwrap();
    let bad = write(dir.path(), "bad.csv", "z\n1.0\nabc\n0.3\n");
    let o = omt(&["locfdr", "--config", &model, "--input", &bad, "--seed", "1", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(EXIT_INPUT));

    let short = write(dir.path(), "short.csv", "z\n1.0\n");
    let o = omt(&["locfdr", "--config", &model, "--input", &short, "--seed", "1", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(EXIT_INPUT));

    let header = write(dir.path(), "header.csv", "x\n1.0\n2.0\n3.0\n");
    let o = omt(&["locfdr", "--config", &model, "--input", &header, "--seed", "1", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(EXIT_INPUT));
    assert!(manifest(dir.path()).error.is_some());
}

#[test]
fn fit_and_analyze_p_values() {
    use omt_core::{MarginalMixture, StreamFactory, TwoGroupModel};
    let model = TwoGroupModel::independent(3000, MarginalMixture::standard(0.2, -2.5).unwrap()).unwrap();
    let z = model.sample(&mut StreamFactory::new(9).stream(0)).z;
    let mut text = String::from("p\n");
    for v in &z {
        text.push_str(&format!("{}\n", omt_core::model::std_normal_cdf(*v)));
    }
    text.push_str("0\n");

    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p.csv", &text);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = omt(&["fit", "--input", &input, "--seed", "2", "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("mixture.json")).unwrap()).unwrap();
    let pi_hat = fit["fit"]["pi_hat"].as_f64().unwrap();
    assert!((pi_hat - 0.2).abs() < 0.05, "pi_hat {pi_hat}");
    assert!(manifest(&out).warnings.iter().any(|w| w.contains("clamped")));

    let o = omt(&["analyze", "--input", &input, "--seed", "2", "--cal-samples", "1000", "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("analysis.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "z,locfdr,est_omt_fdr,est_mfdr,bh,adaptive_bh");
    assert_eq!(csv.lines().count(), z.len() + 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let counts: Vec<u64> = summary["rejections"].as_array().unwrap().iter().map(|r| r[1].as_u64().unwrap()).collect();
    // adaptive BH never rejects fewer than BH
    assert!(counts[3] >= counts[2]);
    assert!(counts[0] > 0);
}
