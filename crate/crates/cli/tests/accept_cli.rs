use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn tipnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tipnet"))
        .args(args)
        .env_remove("TIPNET_SEED")
        .env_remove("TIPNET_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tipnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{"simulation": {"n_agents": 30, "record_clustering": false},
            "forecast": {"n_runs": 4, "warmup_months": 24, "horizon_months": 6}}"#,
    )
    .unwrap();
    path
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn assert_curve_matches(actual: &str, golden: &str) {
    let (a, g) = (parse_csv(actual), parse_csv(golden));
    assert_eq!(a.len(), g.len(), "row count");
    assert_eq!(a[0], g[0], "header");
    for (ra, rg) in a.iter().zip(&g).skip(1) {
        for (ca, cg) in ra.iter().zip(rg) {
            match (ca.parse::<f64>(), cg.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{ra:?} vs {rg:?}"),
                _ => assert_eq!(ca, cg, "{ra:?} vs {rg:?}"),
            }
        }
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn market_hysteresis_matches_golden_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    ok(&[
        "hysteresis",
        "--market",
        s(&fixture("market_synthetic.csv")),
        "--intrinsic",
        s(&fixture("intrinsic_synthetic.csv")),
        "--config",
        s(&fixture("hysteresis_config.json")),
        "--out",
        s(&out),
    ]);
    for (file, golden) in [
        ("curve_full.csv", "golden_curve_full.csv"),
        ("curve_episodes.csv", "golden_curve_episodes.csv"),
    ] {
        assert_curve_matches(
            &fs::read_to_string(out.join(file)).unwrap(),
            &fs::read_to_string(fixture(golden)).unwrap(),
        );
    }
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("hysteresis.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["hysteresis"]["bin_width"], 0.1);
}

#[test]
fn pipeline_from_raw_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (ing, val, coint, raw) = (
        tmp.path().join("ingest"),
        tmp.path().join("intrinsic"),
        tmp.path().join("coint"),
        tmp.path().join("raw"),
    );
    ok(&["ingest", s(&fixture("shiller_synthetic.csv")), "--out", s(&ing)]);
    let m = manifest(&ing);
    for entry in m["outputs"].as_array().unwrap() {
        let bytes = fs::read(ing.join(entry["path"].as_str().unwrap())).unwrap();
        let digest = {
            use sha2::Digest;
            hex::encode(sha2::Sha256::digest(&bytes))
        };
        assert_eq!(entry["sha256"], digest.as_str());
    }
    assert_eq!(
        m["command"]["ingest"]["csv"],
        s(&fs::canonicalize(fixture("shiller_synthetic.csv")).unwrap())
    );

    ok(&["intrinsic", s(&ing.join("fundamentals.csv")), "--out", s(&val)]);
    ok(&[
        "intrinsic",
        s(&ing.join("fundamentals.csv")),
        "--no-forward-correction",
        "--out",
        s(&raw),
    ]);
    let head = fs::read_to_string(raw.join("intrinsic.csv")).unwrap();
    assert!(head.starts_with("month,s_i_raw,"));
    assert_eq!(manifest(&raw)["config"]["intrinsic"]["forward_correction"], false);

    ok(&[
        "cointegration",
        "--market",
        s(&ing.join("market.csv")),
        "--intrinsic",
        s(&val.join("intrinsic.csv")),
        "--out",
        s(&coint),
    ]);
    let report: Value = serde_json::from_str(&fs::read_to_string(coint.join("cointegration.json")).unwrap()).unwrap();
    assert!(report["result"]["engle_granger"]["residual_test"]["z_rho"].is_number());
    assert!(report["result"]["ratio_mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_is_deterministic_across_jobs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let intrinsic = fixture("intrinsic_synthetic.csv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let common = ["--runs", "3", "--ticks", "60", "--seed", "17", "--config", s(&cfg)];
    let mut args_a = vec!["simulate", s(&intrinsic), "--out", s(&a), "--jobs", "1"];
    args_a.extend(common);
    let mut args_b = vec!["simulate", s(&intrinsic), "--out", s(&b), "--jobs", "3"];
    args_b.extend(common);
    ok(&args_a);
    ok(&args_b);
    for k in 0..3 {
        let f = format!("runs/run_{k:04}.csv");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
    assert_ne!(
        fs::read(a.join("runs/run_0000.csv")).unwrap(),
        fs::read(a.join("runs/run_0001.csv")).unwrap()
    );
    assert_eq!(manifest(&a)["seed"], 17);

    let replayed = tmp.path().join("again");
    ok(&["replay", s(&a.join("manifest.json")), "--out", s(&replayed)]);

    // hysteresis on the run files, then a broken manifest must not replay
    let h = tmp.path().join("h");
    ok(&["hysteresis", "--runs-dir", s(&a.join("runs")), "--out", s(&h)]);
    assert!(h.join("curve.csv").exists());
    let mut m = manifest(&a);
    m["outputs"][0]["sha256"] = Value::from("00");
    let tampered = tmp.path().join("tampered.json");
    fs::write(&tampered, m.to_string()).unwrap();
    let out = tipnet(&["replay", s(&tampered), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("differs"));
}

#[test]
fn seed_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("env");
    let run = Command::new(env!("CARGO_BIN_EXE_tipnet"))
        .args([
            "simulate",
            s(&fixture("intrinsic_synthetic.csv")),
            "--ticks",
            "20",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ])
        .env("TIPNET_SEED", "5")
        .env("TIPNET_JOBS", "2")
        .output()
        .unwrap();
    assert!(run.status.success());
    let m = manifest(&out);
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["jobs"], 2);
}

#[test]
fn forecast_cdfs_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (ing, fc) = (tmp.path().join("ingest"), tmp.path().join("fc"));
    ok(&["ingest", s(&fixture("shiller_synthetic.csv")), "--out", s(&ing)]);
    ok(&[
        "forecast",
        s(&ing.join("fundamentals.csv")),
        "--config",
        s(&cfg),
        "--horizon",
        "5",
        "--out",
        s(&fc),
    ]);
    let json: Value = serde_json::from_str(&fs::read_to_string(fc.join("forecast.json")).unwrap()).unwrap();
    let r = &json["result"];
    assert_eq!(r["paths"].as_array().unwrap().len(), 4);
    assert_eq!(r["paths"][0].as_array().unwrap().len(), 5);
    let loss: Vec<f64> = r["loss_cdf"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let gain: Vec<f64> = r["gain_cdf"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(loss.windows(2).all(|w| w[0] <= w[1]));
    assert!(gain.windows(2).all(|w| w[0] >= w[1]));
    ok(&[
        "replay",
        s(&fc.join("manifest.json")),
        "--out",
        s(&tmp.path().join("fc2")),
    ]);
}

#[test]
fn missing_input_names_the_path() {
    let out = tipnet(&[
        "intrinsic",
        "/nonexistent/fundamentals.csv",
        "--out",
        "/tmp/never-written",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/fundamentals.csv"));
    assert!(!Path::new("/tmp/never-written").exists());
}

#[test]
fn invalid_config_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"simulation": {"n_agent": 30}}"#).unwrap();
    let out = tipnet(&[
        "simulate",
        s(&fixture("intrinsic_synthetic.csv")),
        "--config",
        s(&bad),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_agent"));

    fs::write(&bad, r#"{"simulation": {"alpha": -1}}"#).unwrap();
    let out = tipnet(&["simulate", s(&fixture("intrinsic_synthetic.csv")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    let nested = tmp.path().join("x/y");
    let out = tipnet(&[
        "simulate",
        s(&fixture("intrinsic_synthetic.csv")),
        "--ticks",
        "100000",
        "--out",
        s(&nested),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("x").exists(), "partial output left behind");
}

#[test]
fn computation_failure_has_its_own_code() {
    let tmp = tempfile::tempdir().unwrap();
    // a market that never overlaps the intrinsic series
    let market = tmp.path().join("market.csv");
    fs::write(&market, "month,real_price\n1800-01,1.0\n1800-02,2.0\n").unwrap();
    let out = tipnet(&[
        "cointegration",
        "--market",
        s(&market),
        "--intrinsic",
        s(&fixture("intrinsic_synthetic.csv")),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn occupied_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let out = tipnet(&["ingest", s(&fixture("shiller_synthetic.csv")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_to_string(tmp.path().join("keep.txt")).unwrap(), "x");
}
