//! End-to-end tests of the binary: exit codes, report shape, and
//! byte-identical determinism across worker counts.

use std::path::PathBuf;
use std::process::{Command, Output};

fn model(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../models/{name}.json"))
}

fn mbpre(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mbpre"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t);
    }
    cmd.output().expect("binary spawns")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

#[test]
fn reports_are_byte_identical_across_worker_counts() {
    let f3 = model("f3");
    let args = [
        "survival",
        "--model",
        f3.to_str().unwrap(),
        "--seed",
        "42",
        "--n",
        "8",
        "--samples",
        "30000",
        "--trunc",
        "12",
    ];
    let single = mbpre(&args, Some("1"));
    let multi = mbpre(&args, Some("4"));
    assert_eq!(code(&single), 0, "{}", String::from_utf8_lossy(&single.stderr));
    assert_eq!(code(&multi), 0);
    assert!(!single.stdout.is_empty());
    assert_eq!(single.stdout, multi.stdout, "same seed and config must give identical bytes");
}

#[test]
fn validate_passes_on_the_two_type_model() {
    let out = mbpre(
        &["validate", "--model", model("f3").to_str().unwrap(), "--seed", "0"],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("overall PASS"), "stderr: {text}");
}

#[test]
fn validate_h6_violation_exits_2_and_names_the_law() {
    // Second law of the only state has no mass on the empty litter.
    let bad = r#"{
      "p": 2,
      "states": [
        {
          "prob": 1.0,
          "laws": [
            [ {"z": [0,0], "prob": 0.6}, {"z": [1,0], "prob": 0.4} ],
            [ {"z": [0,1], "prob": 0.5}, {"z": [1,1], "prob": 0.5} ]
          ]
        }
      ]
    }"#;
    let path = std::env::temp_dir().join(format!("mbpre-h6-{}.json", std::process::id()));
    std::fs::write(&path, bad).unwrap();
    let out = mbpre(
        &["validate", "--model", path.to_str().unwrap(), "--seed", "0"],
        None,
    );
    std::fs::remove_file(&path).ok();
    assert_eq!(code(&out), 2);
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("H6 FAIL"), "stderr: {text}");
    assert!(text.contains("law 1"), "the offending law index is named: {text}");
    // The machine report is still emitted for inspection.
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["results"]["h6"]["pass"], serde_json::json!(false));
}

#[test]
fn theorem1_on_f2_has_unit_ratio_column() {
    let out = mbpre(
        &[
            "theorem1",
            "--model",
            model("f2").to_str().unwrap(),
            "--seed",
            "0",
            "--n",
            "25",
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema"], serde_json::json!("mbpre-report/1"));
    let rows = report["results"][0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 25);
    for row in rows {
        assert_eq!(row["ratio"], serde_json::json!(1.0), "row: {row}");
    }
}

#[test]
fn csv_format_emits_the_ratio_table() {
    let out = mbpre(
        &[
            "theorem1",
            "--model",
            model("f2").to_str().unwrap(),
            "--seed",
            "0",
            "--n",
            "3",
            "--format",
            "csv",
        ],
        None,
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "start,n,lower,upper,ratio,increment,additive_gap,flagged");
    assert_eq!(lines.len(), 4, "header plus one record per horizon");
    assert!(lines[1].starts_with("1,1,0.375,0.375,1,"));
}

#[test]
fn missing_model_flag_exits_2() {
    let out = mbpre(&["spectral", "--seed", "0"], None);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn unreadable_model_exits_2() {
    let out = mbpre(
        &["spectral", "--model", "/nonexistent/model.json", "--seed", "0"],
        None,
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn start_beyond_truncation_exits_2() {
    let out = mbpre(
        &[
            "survival",
            "--model",
            model("f2").to_str().unwrap(),
            "--seed",
            "1",
            "--start",
            "25",
            "--trunc",
            "4",
        ],
        None,
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn too_small_truncation_exits_3() {
    let out = mbpre(
        &[
            "yaglom",
            "--model",
            model("f3").to_str().unwrap(),
            "--seed",
            "1",
            "--trunc",
            "2",
        ],
        None,
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncation too small"));
}

#[test]
fn no_survivors_exits_4() {
    let out = mbpre(
        &[
            "yaglom",
            "--model",
            model("f1").to_str().unwrap(),
            "--seed",
            "1",
            "--n",
            "40",
            "--samples",
            "50",
        ],
        None,
    );
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient data"));
}

#[test]
fn out_flag_writes_the_report_and_keeps_stdout_clean() {
    let path = std::env::temp_dir().join(format!("mbpre-out-{}.json", std::process::id()));
    let out = mbpre(
        &[
            "eqy",
            "--model",
            model("f3").to_str().unwrap(),
            "--seed",
            "1",
            "--trunc",
            "12",
            "--out",
            path.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty(), "report goes to the file, not stdout");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(report["command"], serde_json::json!("eqy"));
    assert_eq!(report["results"]["residual"]["residual_at_one"], serde_json::json!(0.0));
}
