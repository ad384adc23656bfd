// SPDX-License-Identifier: Apache-2.0
//! Execution layer: designs, synthesis strategies and the pluggable
//! [`ToolBackend`] that turns (design, strategy) into post-layout metrics.

mod design;
mod mock;
mod subprocess;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{parse_script, AbcScript, ScriptError};
use crate::metrics::BackendMetrics;
use crate::report::{ReportError, SynthStats};

pub use design::{Design, DEFAULT_CLOCK_PERIOD_NS};
pub use mock::{
    mock_evaluate, mock_oracle, oracle_script, MockBackend, MockModelParams, OracleGrid,
    ParamDerivation,
};
pub use subprocess::{run_tool, SubprocessBackend, ToolRun};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid design: {0}")]
    Design(String),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{tool} failed during {stage} ({status}):\n{diagnostics}")]
    ToolFailure {
        tool: String,
        stage: String,
        status: String,
        diagnostics: String,
    },
    #[error("{tool} timed out after {:.1}s", elapsed.as_secs_f64())]
    Timeout { tool: String, elapsed: Duration },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("unsupported by this backend: {0}")]
    Unsupported(String),
}

impl BackendError {
    /// True for failures caused by the host setup rather than by the inputs.
    pub fn is_environment(&self) -> bool {
        matches!(self, BackendError::Environment(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FixedKind {
    Delay,
    Area,
}

impl FixedKind {
    pub fn max_level(self) -> u8 {
        match self {
            FixedKind::Delay => 4,
            FixedKind::Area => 3,
        }
    }
}

impl fmt::Display for FixedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedKind::Delay => "DELAY",
            FixedKind::Area => "AREA",
        })
    }
}

/// A synthesis strategy: one of the flow's fixed presets or a custom ABC script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fixed { kind: FixedKind, level: u8 },
    Custom { script: AbcScript },
}

impl Strategy {
    pub fn fixed(kind: FixedKind, level: u8) -> Result<Strategy, BackendError> {
        if level > kind.max_level() {
            return Err(BackendError::Domain(format!(
                "{kind} level {level} outside 0..={}",
                kind.max_level()
            )));
        }
        Ok(Strategy::Fixed { kind, level })
    }

    /// The nine presets in sweep order: DELAY 0-4, then AREA 0-3.
    pub fn sweep_presets() -> Vec<Strategy> {
        let delay = (0..=4).map(|level| Strategy::Fixed {
            kind: FixedKind::Delay,
            level,
        });
        let area = (0..=3).map(|level| Strategy::Fixed {
            kind: FixedKind::Area,
            level,
        });
        delay.chain(area).collect()
    }

    /// Expands presets into their ABC command sequence.
    ///
    /// DELAY k: `strash;[dch;]map -B (1.00-0.05k)` plus k `buffer -c -N 4`, dch for k >= 2.
    /// AREA k: `strash` followed by k+1 `map -B 1.0`.
    pub fn to_script(&self) -> Result<AbcScript, BackendError> {
        match self {
            Strategy::Custom { script } => Ok(script.clone()),
            Strategy::Fixed { kind, level } => {
                let level = *level;
                if level > kind.max_level() {
                    return Err(BackendError::Domain(format!(
                        "{kind} level {level} outside 0..={}",
                        kind.max_level()
                    )));
                }
                let mut text = String::from("strash");
                match kind {
                    FixedKind::Delay => {
                        if level >= 2 {
                            text.push_str(";dch");
                        }
                        let b = (100 - 5 * level as i32) as f64 / 100.0;
                        text.push_str(&format!(";map -B {b:.2}"));
                        for _ in 0..level {
                            text.push_str(";buffer -c -N 4");
                        }
                    }
                    FixedKind::Area => {
                        for _ in 0..=level {
                            text.push_str(";map -B 1.0");
                        }
                    }
                }
                Ok(parse_script(&text)?)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Fixed { kind, level } => format!("{kind} {level}"),
            Strategy::Custom { .. } => "custom".to_string(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Fixed { .. } => f.write_str(&self.label()),
            Strategy::Custom { script } => write!(f, "custom({script})"),
        }
    }
}

impl FromStr for Strategy {
    type Err = BackendError;

    /// `DELAY 3`, `area2` (any case) or a literal ABC script.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        for (prefix, kind) in [("DELAY", FixedKind::Delay), ("AREA", FixedKind::Area)] {
            if let Some(rest) = upper.strip_prefix(prefix) {
                if let Ok(level) = rest.trim().parse::<u8>() {
                    return Strategy::fixed(kind, level);
                }
            }
        }
        Ok(Strategy::Custom {
            script: parse_script(t)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Real,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendMode::Mock),
            "real" => Ok(BackendMode::Real),
            other => Err(format!("unknown backend mode `{other}` (expected mock or real)")),
        }
    }
}

/// `[backend]` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub yosys: String,
    pub iverilog: String,
    pub vvp: String,
    /// Flow-runner argv. `{config}`, `{workdir}`, `{netlist}`, `{top}` and
    /// `{image}` are substituted before launch.
    pub flow_command: Vec<String>,
    pub container_image: String,
    pub liberty: Option<PathBuf>,
    pub synth_timeout_s: f64,
    pub backend_timeout_s: f64,
    pub sim_timeout_s: f64,
    /// Bindings for `${name}` placeholders in ABC scripts.
    pub placeholders: BTreeMap<String, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendMode::Mock,
            yosys: "yosys".into(),
            iverilog: "iverilog".into(),
            vvp: "vvp".into(),
            flow_command: vec!["openlane".into(), "--dockerized".into(), "{config}".into()],
            container_image: "ghcr.io/efabless/openlane2:latest".into(),
            liberty: None,
            synth_timeout_s: 300.0,
            backend_timeout_s: 3600.0,
            sim_timeout_s: 120.0,
            placeholders: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, t) in [
            ("synth_timeout_s", self.synth_timeout_s),
            ("backend_timeout_s", self.backend_timeout_s),
            ("sim_timeout_s", self.sim_timeout_s),
        ] {
            if !(t.is_finite() && t > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.flow_command.is_empty() {
            return Err("flow_command must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub netlist: PathBuf,
    pub stats: SynthStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub passed: bool,
    pub log: PathBuf,
    pub vcd: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub synthesis: bool,
    pub backend: bool,
    pub simulation: bool,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub synth: SynthOutput,
    pub metrics: BackendMetrics,
}

/// Executes the three tool domains. One instance serves one workdir at a time.
pub trait ToolBackend {
    fn capabilities(&self) -> Capabilities;

    fn synthesize(
        &self,
        design: &Design,
        strategy: &Strategy,
        workdir: &Path,
    ) -> Result<SynthOutput, BackendError>;

    fn run_backend(
        &self,
        netlist: &Path,
        design: &Design,
        workdir: &Path,
    ) -> Result<BackendMetrics, BackendError>;

    fn simulate(&self, design: &Design, workdir: &Path) -> Result<SimResult, BackendError>;

    /// Synthesis followed by place-and-route in the same workdir.
    fn evaluate(
        &self,
        design: &Design,
        strategy: &Strategy,
        workdir: &Path,
    ) -> Result<Evaluation, BackendError> {
        let synth = self.synthesize(design, strategy, workdir)?;
        let metrics = self.run_backend(&synth.netlist, design, workdir)?;
        Ok(Evaluation { synth, metrics })
    }
}

pub fn make_backend(config: &BackendConfig) -> Box<dyn ToolBackend + Send + Sync> {
    match config.mode {
        BackendMode::Mock => Box::new(MockBackend::new(config.clone())),
        BackendMode::Real => Box::new(SubprocessBackend::new(config.clone())),
    }
}

/// Creates `workdir` and `workdir/logs`, mapping failures to environment errors.
pub(crate) fn prepare_workdir(workdir: &Path) -> Result<PathBuf, BackendError> {
    let logs = workdir.join("logs");
    std::fs::create_dir_all(&logs).map_err(|e| {
        BackendError::Environment(format!("workdir {} not writable: {e}", workdir.display()))
    })?;
    let probe = workdir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|e| {
        BackendError::Environment(format!("workdir {} not writable: {e}", workdir.display()))
    })?;
    let _ = std::fs::remove_file(probe);
    Ok(logs)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), BackendError> {
    std::fs::write(path, contents)
        .map_err(|e| BackendError::Environment(format!("cannot write {}: {e}", path.display())))
}
