// SPDX-License-Identifier: Apache-2.0
//! Real-tool execution: Yosys synthesis, the place-and-route flow runner and
//! Icarus simulation, each under a wall-clock timeout.
//!
//! Tool output goes to files under `<workdir>/logs/` rather than pipes so a
//! chatty tool can never block on a full pipe while we wait on it.

use std::fs::File;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde_json::json;
use wait_timeout::ChildExt;

use super::{
    prepare_workdir, write_file, BackendConfig, BackendError, Capabilities, Design, SimResult,
    Strategy, SynthOutput, ToolBackend,
};
use crate::metrics::BackendMetrics;
use crate::report::{
    emit_metrics_doc, normalize_flow_metrics, parse_metrics_doc, parse_yosys_stat, ReportError,
    StatFormat,
};

const STDERR_TAIL_LINES: usize = 50;

#[derive(Debug)]
pub struct ToolRun {
    pub status: ExitStatus,
    pub elapsed: Duration,
    pub stdout_log: PathBuf,
    pub stderr_log: PathBuf,
}

impl ToolRun {
    /// Last lines of stderr, or of stdout when stderr is empty.
    pub fn diagnostics(&self) -> String {
        let err = tail(&self.stderr_log, STDERR_TAIL_LINES);
        if err.trim().is_empty() {
            tail(&self.stdout_log, STDERR_TAIL_LINES)
        } else {
            err
        }
    }
}

fn tail(path: &Path, n: usize) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

#[cfg(unix)]
fn kill_tree(child: &mut std::process::Child) {
    // The child leads its own process group; take the whole group down.
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut std::process::Child) {
    let _ = child.kill();
}

/// Runs `program args` in `cwd`, logging to `<logs>/<stem>.{stdout,stderr}.log`.
/// Missing binaries map to [`BackendError::Environment`]; expiry of `timeout`
/// kills the process group and maps to [`BackendError::Timeout`].
pub fn run_tool(
    program: &str,
    args: &[String],
    cwd: &Path,
    logs: &Path,
    stem: &str,
    timeout: Duration,
) -> Result<ToolRun, BackendError> {
    let stdout_log = logs.join(format!("{stem}.stdout.log"));
    let stderr_log = logs.join(format!("{stem}.stderr.log"));
    let open = |p: &Path| {
        File::create(p)
            .map_err(|e| BackendError::Environment(format!("cannot create {}: {e}", p.display())))
    };
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(open(&stdout_log)?)
        .stderr(open(&stderr_log)?);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            BackendError::Environment(format!("tool `{program}` not found on PATH"))
        } else {
            BackendError::Environment(format!("cannot launch `{program}`: {e}"))
        }
    })?;
    let waited = child
        .wait_timeout(timeout)
        .map_err(|e| BackendError::Environment(format!("waiting on `{program}`: {e}")))?;
    match waited {
        Some(status) => Ok(ToolRun {
            status,
            elapsed: start.elapsed(),
            stdout_log,
            stderr_log,
        }),
        None => {
            kill_tree(&mut child);
            let _ = child.wait();
            Err(BackendError::Timeout {
                tool: program.to_string(),
                elapsed: start.elapsed(),
            })
        }
    }
}

fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s)
}

fn abs(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn tcl_quote(p: &Path) -> String {
    format!("{{{}}}", p.display())
}

/// Yosys TCL wrapper around the ABC script in `strategy.abc`.
pub(crate) fn render_synth_tcl(design: &Design, liberty: Option<&Path>) -> String {
    let sources: Vec<String> = design.rtl_sources.iter().map(|p| tcl_quote(&abs(p))).collect();
    let top = &design.top_module;
    let mut tcl = String::from("# generated by eda-loop\nyosys -import\n");
    tcl.push_str(&format!("read_verilog -sv {}\n", sources.join(" ")));
    tcl.push_str(&format!("hierarchy -check -top {top}\n"));
    tcl.push_str(&format!("synth -top {top} -flatten\n"));
    match liberty {
        Some(lib) => {
            let lib = tcl_quote(&abs(lib));
            tcl.push_str(&format!("dfflibmap -liberty {lib}\n"));
            tcl.push_str(&format!("abc -script strategy.abc -liberty {lib}\n"));
            tcl.push_str("opt_clean -purge\n");
            tcl.push_str(&format!("tee -o stat.json stat -json -liberty {lib}\n"));
        }
        None => {
            tcl.push_str("abc -script strategy.abc -g AND,NAND,OR,NOR,XOR,XNOR,ANDNOT,ORNOT,MUX\n");
            tcl.push_str("opt_clean -purge\n");
            tcl.push_str("tee -o stat.json stat -json\n");
        }
    }
    tcl.push_str("write_verilog -noattr netlist.v\n");
    tcl
}

pub(crate) fn synthesize(
    config: &BackendConfig,
    design: &Design,
    strategy: &Strategy,
    workdir: &Path,
) -> Result<SynthOutput, BackendError> {
    design.validate()?;
    // placeholder resolution happens before anything touches the filesystem or spawns
    let script = strategy.to_script()?.substitute(&config.placeholders)?;
    let logs = prepare_workdir(workdir)?;
    script
        .write_file(&workdir.join("strategy.abc"))
        .map_err(|e| BackendError::Environment(e.to_string()))?;
    write_file(
        &workdir.join("synth.tcl"),
        &render_synth_tcl(design, config.liberty.as_deref()),
    )?;
    let run = run_tool(
        &config.yosys,
        &["-c".to_string(), "synth.tcl".to_string()],
        workdir,
        &logs,
        "synth",
        secs(config.synth_timeout_s),
    )?;
    if !run.status.success() {
        return Err(BackendError::ToolFailure {
            tool: config.yosys.clone(),
            stage: "synthesis".into(),
            status: run.status.to_string(),
            diagnostics: run.diagnostics(),
        });
    }
    let netlist = workdir.join("netlist.v");
    if !netlist.exists() {
        return Err(ReportError::Malformed("synthesis produced no netlist.v".into()).into());
    }
    let stats = match std::fs::read_to_string(workdir.join("stat.json")) {
        Ok(text) => parse_yosys_stat(&text, StatFormat::Structured)?,
        Err(_) => {
            let log = std::fs::read_to_string(&run.stdout_log).unwrap_or_default();
            parse_yosys_stat(&log, StatFormat::Plain)?
        }
    };
    Ok(SynthOutput { netlist, stats })
}

/// Flow-runner configuration for a pre-synthesized netlist.
fn flow_config(design: &Design, netlist: &Path) -> serde_json::Value {
    json!({
        "DESIGN_NAME": design.top_module,
        "VERILOG_FILES": [abs(netlist).display().to_string()],
        "CLOCK_PERIOD": design.clock_period_ns,
        "CLOCK_PORT": design.clock_port.as_deref().unwrap_or("clk"),
        "SYNTH_ELABORATE_ONLY": true,
    })
}

/// Newest `runs/*/final/metrics.json` below the workdir (flow-runner v2 layout).
fn find_flow_metrics(workdir: &Path) -> Option<PathBuf> {
    let runs = std::fs::read_dir(workdir.join("runs")).ok()?;
    runs.filter_map(Result::ok)
        .map(|e| e.path().join("final").join("metrics.json"))
        .filter(|p| p.exists())
        .max_by_key(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
}

/// Name of the last flow step mentioned in the runner log.
fn failing_stage(log: &str) -> String {
    log.lines()
        .rev()
        .find_map(|l| {
            let start = l.find("Running '")? + "Running '".len();
            let end = l[start..].find('\'')?;
            Some(l[start..start + end].to_string())
        })
        .unwrap_or_else(|| "flow".to_string())
}

pub(crate) fn run_backend(
    config: &BackendConfig,
    netlist: &Path,
    design: &Design,
    workdir: &Path,
) -> Result<BackendMetrics, BackendError> {
    if !netlist.exists() {
        return Err(BackendError::Precondition(format!(
            "netlist {} does not exist",
            netlist.display()
        )));
    }
    let logs = prepare_workdir(workdir)?;
    let config_path = workdir.join("flow_config.json");
    write_file(
        &config_path,
        &serde_json::to_string_pretty(&flow_config(design, netlist)).expect("json"),
    )?;
    let argv: Vec<String> = config
        .flow_command
        .iter()
        .map(|a| {
            a.replace("{config}", &abs(&config_path).display().to_string())
                .replace("{workdir}", &abs(workdir).display().to_string())
                .replace("{netlist}", &abs(netlist).display().to_string())
                .replace("{top}", &design.top_module)
                .replace("{image}", &config.container_image)
        })
        .collect();
    let (program, args) = argv.split_first().ok_or_else(|| {
        BackendError::Environment("flow_command is empty".into())
    })?;
    let run = run_tool(program, args, workdir, &logs, "flow", secs(config.backend_timeout_s))?;
    if !run.status.success() {
        let out = std::fs::read_to_string(&run.stdout_log).unwrap_or_default();
        let err = std::fs::read_to_string(&run.stderr_log).unwrap_or_default();
        return Err(BackendError::ToolFailure {
            tool: program.clone(),
            stage: failing_stage(&format!("{out}\n{err}")),
            status: run.status.to_string(),
            diagnostics: run.diagnostics(),
        });
    }
    let source = find_flow_metrics(workdir).ok_or_else(|| {
        ReportError::Malformed(format!(
            "flow finished but no runs/*/final/metrics.json under {}",
            workdir.display()
        ))
    })?;
    let raw = std::fs::read_to_string(&source)
        .map_err(|e| ReportError::Malformed(format!("{}: {e}", source.display())))?;
    let m = normalize_flow_metrics(&raw, design.clock_period_ns, run.elapsed.as_secs_f64())?;
    let doc = emit_metrics_doc(&m);
    write_file(&workdir.join("metrics.json"), &doc)?;
    Ok(parse_metrics_doc(&doc)?)
}

/// True when any token of `log` starts with `FAIL`.
fn log_reports_failure(log: &str) -> bool {
    log.split(|c: char| !c.is_ascii_alphanumeric())
        .any(|tok| tok.starts_with("FAIL"))
}

pub(crate) fn simulate(
    config: &BackendConfig,
    design: &Design,
    workdir: &Path,
) -> Result<SimResult, BackendError> {
    let testbench = design.testbench.as_ref().ok_or_else(|| {
        BackendError::Precondition(format!("design `{}` has no testbench", design.name))
    })?;
    let logs = prepare_workdir(workdir)?;
    let mut args = vec![
        "-g2012".to_string(),
        "-o".to_string(),
        "sim.vvp".to_string(),
        abs(testbench).display().to_string(),
    ];
    args.extend(design.rtl_sources.iter().map(|p| abs(p).display().to_string()));
    let compile = run_tool(&config.iverilog, &args, workdir, &logs, "compile", secs(config.sim_timeout_s))?;
    if !compile.status.success() {
        return Err(BackendError::ToolFailure {
            tool: config.iverilog.clone(),
            stage: "compile".into(),
            status: compile.status.to_string(),
            diagnostics: compile.diagnostics(),
        });
    }
    let run = run_tool(
        &config.vvp,
        &["sim.vvp".to_string()],
        workdir,
        &logs,
        "sim",
        secs(config.sim_timeout_s),
    )?;
    let log = std::fs::read_to_string(&run.stdout_log).unwrap_or_default();
    let passed = run.status.success() && !log_reports_failure(&log);
    let vcd = std::fs::read_dir(workdir)
        .ok()
        .into_iter()
        .flatten()
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "vcd"))
        .max();
    Ok(SimResult {
        passed,
        log: run.stdout_log,
        vcd,
    })
}

/// Drives the real toolchain.
pub struct SubprocessBackend {
    config: BackendConfig,
}

impl SubprocessBackend {
    pub fn new(config: BackendConfig) -> Self {
        SubprocessBackend { config }
    }
}

impl ToolBackend for SubprocessBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            synthesis: true,
            backend: true,
            simulation: true,
            deterministic: false,
        }
    }

    fn synthesize(
        &self,
        design: &Design,
        strategy: &Strategy,
        workdir: &Path,
    ) -> Result<SynthOutput, BackendError> {
        synthesize(&self.config, design, strategy, workdir)
    }

    fn run_backend(
        &self,
        netlist: &Path,
        design: &Design,
        workdir: &Path,
    ) -> Result<BackendMetrics, BackendError> {
        run_backend(&self.config, netlist, design, workdir)
    }

    fn simulate(&self, design: &Design, workdir: &Path) -> Result<SimResult, BackendError> {
        simulate(&self.config, design, workdir)
    }
}
