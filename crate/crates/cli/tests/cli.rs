// SPDX-License-Identifier: Apache-2.0

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use eda_loop_core::backend::{mock_oracle, MockModelParams, OracleGrid};
use eda_loop_core::metrics::Objective;
use eda_loop_core::optimizer::{OptimizationHistory, Phase};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_eda-loop");

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn counter() -> PathBuf {
    root().join("designs/mock_counter/design.toml")
}

fn eda(runs: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--runs-dir")
        .arg(runs)
        .args(args)
        .env_remove("EDA_LOOP_API_KEY")
        .output()
        .expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn serve(args: &[&str], input: &str) -> (i32, String) {
    let mut child = Command::new(BIN)
        .args(args)
        .arg("serve")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let mut out = String::new();
    child.stdout.take().unwrap().read_to_string(&mut out).unwrap();
    (child.wait().unwrap().code().unwrap_or(-1), out)
}

fn history_path(out: &str) -> PathBuf {
    let line = out.lines().find_map(|l| l.strip_prefix("history: ")).expect("history line");
    PathBuf::from(line)
}

#[test]
fn serve_exits_cleanly_on_eof() {
    let (code, out) = serve(&[], "");
    assert_eq!(code, 0);
    assert!(out.is_empty());
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "objective = \"SPEED\"\n").unwrap();
    let (code, _) = serve(&["--config", cfg.to_str().unwrap()], "");
    assert_eq!(code, 2);
}

#[test]
fn serve_initialize_then_list() {
    let input = concat!(
        r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{"protocolVersion":"2025-06-18"}}"#,
        "\n",
        r#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#,
        "\n",
        r#"{"jsonrpc":"2.0","id":2,"method":"tools/list"}"#,
        "\n"
    );
    let (code, out) = serve(&[], input);
    assert_eq!(code, 0);
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    let names: Vec<&str> = lines[1]["result"]["tools"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "simulate_rtl",
            "synthesize",
            "run_backend",
            "sweep_baseline",
            "optimize_design",
            "query_docs",
            "get_history",
            "report_table"
        ]
    );
}

/// Replaces the scratch directory and run-directory timestamps with fixed tokens.
fn mask(text: &str, dir: &Path) -> String {
    let masked = text.replace(dir.to_str().unwrap(), "@DIR@");
    let mut out = String::with_capacity(masked.len());
    let mut rest = masked.as_str();
    let marker = "@DIR@/runs/t/";
    while let Some(i) = rest.find(marker) {
        out.push_str(&rest[..i + marker.len()]);
        rest = &rest[i + marker.len()..];
        let end = rest.find('/').unwrap_or(rest.len());
        out.push_str("@RUN@");
        rest = &rest[end..];
    }
    out.push_str(rest);
    out
}

#[test]
fn serve_golden_transcript() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.v"), "module t(input a, output y); assign y = a; endmodule\n")
        .unwrap();
    let fixtures = root().join("fixtures/mcp");
    let input = std::fs::read_to_string(fixtures.join("session.in.jsonl"))
        .unwrap()
        .replace("@DIR@", dir.path().to_str().unwrap());
    let runs = dir.path().join("runs");
    let corpus = root().join("docs/corpus");
    let (code, out) = serve(
        &["--runs-dir", runs.to_str().unwrap(), "--corpus-dir", corpus.to_str().unwrap()],
        &input,
    );
    assert_eq!(code, 0);
    let got = mask(&out, dir.path());
    let golden = fixtures.join("session.out.jsonl");
    if std::env::var_os("EDA_LOOP_BLESS").is_some() {
        std::fs::write(&golden, &got).unwrap();
    }
    let want = std::fs::read_to_string(&golden).expect("golden transcript");
    for (i, (g, w)) in got.lines().zip(want.lines()).enumerate() {
        assert_eq!(g, w, "reply {i} differs");
    }
    assert_eq!(got.lines().count(), want.lines().count());
}

#[test]
fn sweep_prints_nine_rows_and_marks_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["sweep", counter().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.contains(" SWEEP ")).collect();
    assert_eq!(rows.len(), 9);
    let starred: Vec<&&str> = rows.iter().filter(|l| l.starts_with('*')).collect();
    assert_eq!(starred.len(), 1);
    assert!(starred[0].contains("DELAY 4") && starred[0].contains("1.5312"));
    assert!(out.contains("best AREA     AREA 3"));
    let h = OptimizationHistory::load(&history_path(&out)).unwrap();
    assert_eq!(h.records.len(), 9);
}

#[test]
fn sweep_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let table = |o: Output| {
        stdout(&o).lines().filter(|l| !l.starts_with("history: ")).collect::<Vec<_>>().join("\n")
    };
    let a = table(eda(dir.path(), &["sweep", counter().to_str().unwrap()]));
    let b = table(eda(dir.path(), &["sweep", counter().to_str().unwrap()]));
    assert_eq!(a, b);
}

#[test]
fn missing_design_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["sweep", "no/such/design.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn optimize_timing_reaches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["optimize", counter().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = OptimizationHistory::load(&history_path(&stdout(&o))).unwrap();
    let params = MockModelParams::explicit(5000.0, 2.0).unwrap();
    let (_, best) =
        mock_oracle(&params, Objective::Timing, &h.reference.unwrap(), &OracleGrid::default(), 10.0)
            .unwrap();
    let got = h.baseline().unwrap().metrics.critical_path_ns;
    assert!(got <= best.critical_path_ns * 1.02, "{got} vs {}", best.critical_path_ns);
    assert!(h.refine_count() <= 10);
}

#[test]
fn no_feedback_makes_one_proposal() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["--advisor", "no-feedback", "optimize", counter().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = OptimizationHistory::load(&history_path(&stdout(&o))).unwrap();
    assert_eq!(h.records.iter().filter(|r| r.phase == Phase::Refine).count(), 1);
    assert_eq!(h.mode, "no-feedback");
}

#[test]
fn remote_without_credential_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let o = eda(&runs, &["--advisor", "remote", "optimize", counter().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("EDA_LOOP_API_KEY"));
    assert!(!runs.exists());
}

#[test]
fn report_from_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = root().join("fixtures/comparison.csv");
    let o = eda(dir.path(), &["report", "--csv", fixture.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    let ratio = out.lines().find(|l| l.starts_with("Ratio")).unwrap();
    assert_eq!(ratio.split_whitespace().nth(1), Some("1"));
    assert_eq!(out.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('-')).count(), 13);
}

#[test]
fn report_single_history_has_unit_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["optimize", counter().to_str().unwrap()]);
    let path = history_path(&stdout(&o));
    let o = eda(dir.path(), &["report", "--history", path.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let ratio = out.lines().find(|l| l.starts_with("Ratio")).unwrap();
    assert_eq!(ratio, "Ratio,1,1");
}

#[test]
fn report_text_and_csv_agree() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = root().join("fixtures/comparison.csv");
    let text = stdout(&eda(dir.path(), &["report", "--csv", fixture.to_str().unwrap()]));
    let csv = stdout(&eda(
        dir.path(),
        &["report", "--csv", fixture.to_str().unwrap(), "--format", "csv"],
    ));
    let from_text: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('-'))
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    let from_csv: Vec<Vec<String>> =
        csv.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(from_text, from_csv);
}

#[test]
fn report_without_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(eda(dir.path(), &["report"]).status.code(), Some(2));
}

#[test]
fn simulate_without_testbench_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eda(dir.path(), &["simulate", counter().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_flags() {
    let o = Command::new(BIN).arg("--help").output().unwrap();
    let out = stdout(&o);
    for flag in [
        "--config",
        "--runs-dir",
        "--corpus-dir",
        "--backend",
        "--advisor",
        "--objective",
        "--verbose",
        "serve",
        "sweep",
        "optimize",
        "report",
        "simulate",
    ] {
        assert!(out.contains(flag), "missing {flag}");
    }
    let o = Command::new(BIN).args(["optimize", "--help"]).output().unwrap();
    let out = stdout(&o);
    for flag in ["--max-iterations", "--patience", "--target", "--constraints", "--resume"] {
        assert!(out.contains(flag), "missing {flag}");
    }
}

#[test]
fn resume_continues_a_short_run() {
    let dir = tempfile::tempdir().unwrap();
    let design = counter();
    let o = eda(dir.path(), &["optimize", design.to_str().unwrap(), "--max-iterations", "2"]);
    assert!(o.status.success());
    let path = history_path(&stdout(&o));
    let o = eda(
        dir.path(),
        &["optimize", design.to_str().unwrap(), "--resume", path.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = OptimizationHistory::load(&path).unwrap();
    let fresh_dir = tempfile::tempdir().unwrap();
    let o = eda(fresh_dir.path(), &["optimize", design.to_str().unwrap()]);
    let fresh = OptimizationHistory::load(&history_path(&stdout(&o))).unwrap();
    assert_eq!(resumed.records, fresh.records);
}
