use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ppg_gate_core::clustering::FrozenGate;
use ppg_gate_core::io;
use ppg_gate_core::pipeline::{GateModel, RunDir};

const SMALL_CONFIG: &str = r#"{
  "encoder": { "epochs": 2 },
  "clustering": { "min_cluster_size": 5 }
}"#;

fn ppg_gate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppg-gate")).args(args).output().expect("spawn ppg-gate")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_trace(path: &Path, fs_hz: f64, samples: &[f64]) {
    let mut text = format!("# source_id={}\n# fs_hz={fs_hz}\n", path.file_stem().unwrap().to_string_lossy());
    for v in samples {
        text.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn pulse(seconds: f64, fs_hz: f64) -> Vec<f64> {
    let n = (seconds * fs_hz).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs_hz;
            (std::f64::consts::TAU * 1.2 * t).sin() + 0.4 * (std::f64::consts::TAU * 2.4 * t).sin()
        })
        .collect()
}

struct SmallRun {
    _tmp: tempfile::TempDir,
    out: PathBuf,
    config: PathBuf,
}

/// One small synthetic run shared by the tests that only read from it.
fn small_run() -> &'static SmallRun {
    static RUN: OnceLock<SmallRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("small.json");
        std::fs::write(&config, SMALL_CONFIG).unwrap();
        let out = tmp.path().join("run");
        let o = ppg_gate(&[
            "run",
            "--synth",
            "--n-clean",
            "100",
            "--n-poor",
            "100",
            "--deterministic",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        SmallRun { _tmp: tmp, out, config }
    })
}

#[test]
fn condition_counts_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("a.csv");
    write_trace(&trace, 128.0, &pulse(216.0, 128.0));
    let out = tmp.path().join("run");
    let o = ppg_gate(&["condition", trace.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let windows = io::read_windows(&out.join("windows.ppgw"), &out.join("windows.csv")).unwrap();
    assert_eq!(windows.len(), 53);
    assert!(windows.iter().all(|w| w.samples.len() == 200 && w.source_id == "a"));
}

#[test]
fn condition_without_inputs_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ppg_gate(&["condition", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no inputs"), "{}", stderr(&o));
}

#[test]
fn corrupted_header_is_skipped_and_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.csv");
    write_trace(&good, 25.0, &pulse(20.0, 25.0));
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "# fs_hz=abc\n1\n2\n").unwrap();
    let out = tmp.path().join("run");
    let pattern = format!("{}/*.csv", tmp.path().display());
    let o = ppg_gate(&["condition", &pattern, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("condition.json")).unwrap()).unwrap();
    let skipped = report["skipped"].as_array().unwrap();
    assert_eq!(skipped.len(), 1);
    assert!(skipped[0]["path"].as_str().unwrap().ends_with("bad.csv"));

    // Every input failing is an error.
    let o = ppg_gate(&["condition", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_upstream_artifact_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ppg_gate(&["cluster", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("signatures"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.json");
    std::fs::write(&config, r#"{ "encoder": { "epoch": 3 } }"#).unwrap();
    let o = ppg_gate(&["train", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    std::fs::write(&config, r#"{ "conditioning": { "win_len": 250 } }"#).unwrap();
    let o = ppg_gate(&["train", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "input length no longer matches the window length");
}

#[test]
fn small_run_writes_every_artifact() {
    let run = small_run();
    let dir = RunDir { root: run.out.clone() };
    for path in [
        dir.windows(),
        dir.checkpoint(),
        dir.train_log(),
        dir.features(),
        dir.signatures_csv(),
        dir.signatures_bin(),
        dir.clusters(),
        dir.gate_model(),
        dir.truth(),
        dir.report(),
    ] {
        assert!(path.is_file(), "{}", path.display());
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.report()).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let arms: Vec<&str> = report["ablations"].as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(arms, ["ssl_ph_hdbscan", "ssl_ph_kmeans", "ssl_hdbscan", "ssl_kmeans"]);
    assert!(report["timings_s"].as_object().unwrap().values().all(|v| v == 0.0));

    let rows = io::read_cluster_csv(&dir.clusters()).unwrap();
    let accepted = rows.iter().filter(|r| r.sqi == 1).count();
    assert_eq!(report["clusters"]["acceptance_rate"].as_f64().unwrap(), accepted as f64 / rows.len() as f64);
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let run = small_run();
    let dir = RunDir { root: run.out.clone() };
    let before = std::fs::read(dir.report()).unwrap();
    let signatures = std::fs::read(dir.signatures_csv()).unwrap();
    for stage in ["topo", "cluster", "evaluate"] {
        let o = ppg_gate(&[stage, "--deterministic", "--config", run.config.to_str().unwrap(), "--out", run.out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    assert_eq!(std::fs::read(dir.signatures_csv()).unwrap(), signatures);
    assert_eq!(std::fs::read(dir.report()).unwrap(), before);
}

#[test]
fn gate_matches_frozen_rule_on_persisted_signatures() {
    let run = small_run();
    let dir = RunDir { root: run.out.clone() };
    let o = ppg_gate(&[
        "gate",
        "--config",
        run.config.to_str().unwrap(),
        "--out",
        run.out.to_str().unwrap(),
        dir.windows().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let gated: Vec<(u64, u8)> = reader.deserialize().map(|r| r.unwrap()).collect();

    let windows = io::read_windows(&dir.windows(), &dir.window_index()).unwrap();
    assert_eq!(gated.len(), windows.len());
    assert!(gated.iter().enumerate().all(|(i, &(id, _))| id == i as u64));

    let model: GateModel = io::read_json(&dir.gate_model()).unwrap();
    let gate: &FrozenGate = &model.gate;
    let mut want = vec![0u8; windows.len()];
    for row in io::read_signatures_csv(&dir.signatures_csv()).unwrap() {
        want[row.window_id as usize] = gate.classify(&row.signature().to_array());
    }
    let got: Vec<u8> = gated.iter().map(|&(_, s)| s).collect();
    assert_eq!(got, want);
    assert!(windows.iter().zip(&got).all(|(w, &s)| !w.degenerate || s == 0));
}

#[test]
fn gate_flatline_is_poor_and_empty_trace_is_silent() {
    let run = small_run();
    let tmp = tempfile::tempdir().unwrap();
    let flat = tmp.path().join("flat.csv");
    write_trace(&flat, 25.0, &vec![3.0; 25 * 30]);
    let empty = tmp.path().join("empty.csv");
    write_trace(&empty, 25.0, &[]);
    let gate = |input: &Path| {
        ppg_gate(&["gate", "--config", run.config.to_str().unwrap(), "--out", run.out.to_str().unwrap(), input.to_str().unwrap()])
    };

    let o = gate(&flat);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{text}");

    let o = gate(&empty);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "window_id,sqi");
}

#[test]
fn gate_rejects_mismatched_window_length() {
    let run = small_run();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("long.json");
    std::fs::write(&config, r#"{ "conditioning": { "win_len": 250 }, "encoder": { "input_len": 250 } }"#).unwrap();
    let trace = tmp.path().join("a.csv");
    write_trace(&trace, 25.0, &pulse(30.0, 25.0));
    let o = ppg_gate(&["gate", "--config", config.to_str().unwrap(), "--out", run.out.to_str().unwrap(), trace.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
