use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qkd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("QKD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = qkd(args, out);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn malformed_configs_exit_with_config_code_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "{ not json",
        r#"{"schema_version": 1}"#,
        r#"{"schema_version": 7, "seed": 1, "decoy": {}}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&cfg, text).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let o = qkd(&["pipeline", "--config", cfg.to_str().unwrap()], &out);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(!out.exists(), "outputs written for {text}");
    }

    // well-formed JSON with an invalid intensity ordering
    let text = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(["preset", "link-85km"])
        .output()
        .unwrap()
        .stdout;
    let mut v: Value = serde_json::from_slice(&text).unwrap();
    v["decoy"]["intensities"] = serde_json::json!([0.1, 0.3, 0.0]);
    let cfg = dir.path().join("order.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = dir.path().join("order");
    let o = qkd(&["pipeline", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let o = qkd(&["pipeline", "--preset", "nowhere"], &dir.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inconsistent_tallies_exit_with_analysis_code() {
    let dir = tempfile::tempdir().unwrap();
    let tallies = serde_json::json!({
        "levels": [
            {"pulses_sent": 1_000_000_000u64, "sifted_detections": 100, "sifted_errors": 3},
            {"pulses_sent": 100_000_000u64, "sifted_detections": 900_000, "sifted_errors": 3},
            {"pulses_sent": 50_000_000u64, "sifted_detections": 10, "sifted_errors": 3}
        ],
        "clock_cycles": 1_150_000_000u64
    });
    let path = dir.path().join("t.json");
    std::fs::write(&path, tallies.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = qkd(
        &[
            "analyze",
            "--preset",
            "link-85km",
            "--tallies",
            path.to_str().unwrap(),
        ],
        &out,
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!out.exists());
}

#[test]
fn pipeline_reruns_are_byte_identical_and_key_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["pipeline", "--preset", "link-85km", "--seed", "3"], &a);
    ok(&["pipeline", "--preset", "link-85km", "--seed", "3"], &b);
    for f in ["report.json", "key.hex"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report: Value = serde_json::from_str(&read(&a.join("report.json"))).unwrap();
    let n_sec = report["n_sec"].as_u64().unwrap();
    assert!(n_sec > 0);
    assert_eq!(report["reconciliation_verified"], Value::Bool(true));
    let key = read(&a.join("key.hex"));
    let mut lines = key.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with(&format!(
        "# n_sec={n_sec} epsilon_budget=6e-7 config_digest="
    )));
    assert!(header.ends_with(report["config_digest"].as_str().unwrap()));
    let hex = lines.next().unwrap();
    assert_eq!(hex.len() as u64, n_sec.div_ceil(8) * 2);
    assert!(hex
        .chars()
        .all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));

    let c = dir.path().join("c");
    ok(&["pipeline", "--preset", "link-85km", "--seed", "4"], &c);
    assert_ne!(read(&a.join("key.hex")), read(&c.join("key.hex")));
}

#[test]
fn figure_two_reaches_past_107_km() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["figure", "fig2", "--preset", "link-100km"], &a);
    ok(&["figure", "fig2", "--preset", "link-100km"], &b);
    let text = read(&a.join("fig2.csv"));
    assert_eq!(text, read(&b.join("fig2.csv")));
    assert!(text.starts_with("distance_km,rate_bps\n"));
    let rows = csv_rows(&text);
    let at = |d: f64| rows.iter().find(|r| r[0] == d).unwrap()[1];
    assert!(at(107.0) > 0.0);
    assert_eq!(at(115.0), 0.0);
}

#[test]
fn figure_three_identity_row_equals_base_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&["pipeline", "--preset", "link-100km"], &out);
    ok(&["figure", "fig3", "--preset", "link-100km"], &out);
    let report: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    let text = read(&out.join("fig3.csv"));
    assert!(text.starts_with("time_s,y1_lower,b1_upper,rate_bps\n"));
    let rows = csv_rows(&text);
    let row = rows.iter().find(|r| r[0] == 828.0).expect("828 s row");
    assert_eq!(row[1], report["y1_lower"].as_f64().unwrap());
    assert_eq!(row[2], report["b1_upper"].as_f64().unwrap());
    assert_eq!(row[3], report["rate_bps"].as_f64().unwrap());
}

#[test]
fn preset_file_round_trips_and_formats_work() {
    let dir = tempfile::tempdir().unwrap();
    let text = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(["preset", "link-100km"])
        .output()
        .unwrap()
        .stdout;
    let cfg = dir.path().join("s.json");
    std::fs::write(&cfg, &text).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["analyze", "--config", cfg.to_str().unwrap()], &a);
    ok(
        &["analyze", "--preset", "link-100km", "--format", "csv"],
        &b,
    );
    let report: Value = serde_json::from_str(&read(&a.join("report.json"))).unwrap();
    let csv = read(&b.join("report.csv"));
    let mut lines = csv.lines();
    let keys: Vec<&str> = lines.next().unwrap().split(',').collect();
    let vals: Vec<&str> = lines.next().unwrap().split(',').collect();
    let get = |k: &str| vals[keys.iter().position(|x| *x == k).unwrap()];
    assert_eq!(
        get("config_digest"),
        report["config_digest"].as_str().unwrap()
    );
    assert_eq!(
        get("n_sec").parse::<u64>().unwrap(),
        report["n_sec"].as_u64().unwrap()
    );
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args([
            "sweep-time",
            "--preset",
            "link-85km",
            "--factors",
            "0.5,1,2",
        ])
        .env("QKD_OUT_DIR", dir.path().join("env"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let rows = csv_rows(&read(&dir.path().join("env").join("sweep_time.csv")));
    assert_eq!(rows.len(), 3);
    assert!(rows[0][4] <= rows[1][4] && rows[1][4] <= rows[2][4]);
}

#[test]
fn simulate_and_optimize_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&["simulate", "--preset", "link-85km"], &out);
    let tallies: Value = serde_json::from_str(&read(&out.join("tallies.json"))).unwrap();
    let sifted: u64 = tallies["levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["sifted_detections"].as_u64().unwrap())
        .sum();
    let records = read(&out.join("detections.csv"));
    assert_eq!(records.lines().count() as u64, sifted + 1);

    ok(&["optimize", "--preset", "link-85km"], &out);
    let summary: Value = serde_json::from_str(&read(&out.join("optimization.json"))).unwrap();
    assert!(
        summary["predicted_rate_bps"].as_f64().unwrap()
            >= summary["scenario_rate_bps"].as_f64().unwrap()
    );
    assert!(read(&out.join("optimize_trace.csv")).lines().count() > 100);
}
