// SPDX-License-Identifier: Apache-2.0
#![cfg(unix)]

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::{Duration, Instant};

use eda_loop_core::backend::{
    run_tool, BackendConfig, BackendError, BackendMode, Design, Strategy, SubprocessBackend,
    ToolBackend,
};

fn stub(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p.display().to_string()
}

fn and2() -> Design {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../designs/and2");
    let mut d = Design::load(&root.join("design.toml")).unwrap();
    d.resolve_paths(&root);
    d
}

fn on_path(tool: &str) -> bool {
    std::env::var_os("PATH")
        .is_some_and(|p| std::env::split_paths(&p).any(|d| d.join(tool).is_file()))
}

#[test]
fn timeout_kills_the_tool() {
    let dir = tempfile::tempdir().unwrap();
    let sleeper = stub(dir.path(), "sleeper", "sleep 30");
    let start = Instant::now();
    let err = run_tool(&sleeper, &[], dir.path(), dir.path(), "sleep", Duration::from_millis(200))
        .unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(5));
    match err {
        // the deadline is measured inside the waiter, so allow scheduler slack
        BackendError::Timeout { elapsed, .. } => {
            assert!(elapsed >= Duration::from_millis(150), "{elapsed:?}")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_tool_is_environment_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_tool(
        "eda-loop-no-such-tool",
        &[],
        dir.path(),
        dir.path(),
        "x",
        Duration::from_secs(1),
    )
    .unwrap_err();
    assert!(err.is_environment(), "{err:?}");
}

#[test]
fn output_lands_in_logs() {
    let dir = tempfile::tempdir().unwrap();
    let talker = stub(dir.path(), "talker", "echo out; echo line1 >&2; echo line2 >&2; exit 3");
    let run = run_tool(&talker, &[], dir.path(), dir.path(), "talk", Duration::from_secs(5)).unwrap();
    assert_eq!(run.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&run.stdout_log).unwrap(), "out\n");
    assert_eq!(run.diagnostics(), "line1\nline2");
}

fn stub_backend(dir: &Path, yosys_body: &str, timeout_s: f64) -> SubprocessBackend {
    SubprocessBackend::new(BackendConfig {
        mode: BackendMode::Real,
        yosys: stub(dir, "fake-yosys", yosys_body),
        synth_timeout_s: timeout_s,
        ..BackendConfig::default()
    })
}

#[test]
fn failing_synthesis_reports_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let b = stub_backend(dir.path(), "echo 'ERROR: syntax error near endmodule' >&2; exit 1", 5.0);
    let s = Strategy::sweep_presets().remove(0);
    match b.synthesize(&and2(), &s, &dir.path().join("w")).unwrap_err() {
        BackendError::ToolFailure { diagnostics, .. } => {
            assert!(diagnostics.contains("syntax error"), "{diagnostics}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn hanging_synthesis_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let b = stub_backend(dir.path(), "sleep 30", 0.3);
    let s = Strategy::sweep_presets().remove(0);
    let start = Instant::now();
    let err = b.synthesize(&and2(), &s, &dir.path().join("w")).unwrap_err();
    assert!(matches!(err, BackendError::Timeout { .. }), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn synthesis_writes_script_and_tcl() {
    let dir = tempfile::tempdir().unwrap();
    let b = stub_backend(dir.path(), "exit 1", 5.0);
    let s = Strategy::sweep_presets().remove(0);
    let w = dir.path().join("w");
    assert!(b.synthesize(&and2(), &s, &w).is_err());
    let abc = std::fs::read_to_string(w.join("strategy.abc")).unwrap();
    assert!(abc.contains("map"), "{abc}");
    let tcl = std::fs::read_to_string(w.join("synth.tcl")).unwrap();
    assert!(tcl.contains("strategy.abc") && tcl.contains("-top and2"), "{tcl}");
}

fn real_backend() -> Option<SubprocessBackend> {
    if ["yosys", "iverilog", "vvp"].iter().all(|t| on_path(t)) {
        Some(SubprocessBackend::new(BackendConfig { mode: BackendMode::Real, ..BackendConfig::default() }))
    } else {
        eprintln!("skipping: yosys/iverilog/vvp not installed");
        None
    }
}

#[test]
fn real_synthesis_of_and2() {
    let Some(b) = real_backend() else { return };
    let dir = tempfile::tempdir().unwrap();
    let out = b
        .synthesize(&and2(), &Strategy::sweep_presets().remove(0), &dir.path().join("w"))
        .unwrap();
    assert!(out.netlist.is_file());
    assert!(out.stats.num_cells >= 1);
}

#[test]
fn real_simulation_of_and2() {
    let Some(b) = real_backend() else { return };
    let dir = tempfile::tempdir().unwrap();
    let r = b.simulate(&and2(), &dir.path().join("sim")).unwrap();
    assert!(r.passed);
    assert!(r.log.is_file());
}
