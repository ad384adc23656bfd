// SPDX-License-Identifier: Apache-2.0
//! TOML settings shared by the command line and the tool server.
//!
//! ```toml
//! runs_dir = "runs"
//! corpus_dir = "docs/corpus"
//! objective = "TIMING"
//!
//! [backend]
//! mode = "mock"
//!
//! [advisor]
//! mode = "heuristic"
//!
//! [loop]
//! max_iterations = 10
//! patience = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisor::AdvisorConfig;
use crate::backend::BackendConfig;
use crate::metrics::Objective;
use crate::optimizer::LoopConfig;

#[derive(Debug, Error)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub runs_dir: PathBuf,
    /// Directory of `.txt`/`.md` documentation snippets; retrieval is off when unset.
    pub corpus_dir: Option<PathBuf>,
    pub objective: Objective,
    pub backend: BackendConfig,
    pub advisor: AdvisorConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            runs_dir: PathBuf::from("runs"),
            corpus_dir: None,
            objective: Objective::Timing,
            backend: BackendConfig::default(),
            advisor: AdvisorConfig::default(),
            loop_config: LoopConfig::default(),
        }
    }
}

impl Settings {
    /// Reads and validates a settings file. Relative directories in the file
    /// are resolved against the file's own directory.
    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut s: Settings =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if s.runs_dir.is_relative() {
            s.runs_dir = base.join(&s.runs_dir);
        }
        if let Some(c) = s.corpus_dir.as_mut().filter(|c| c.is_relative()) {
            *c = base.join(&*c);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend.validate().map_err(ConfigError)?;
        self.loop_config.validate().map_err(ConfigError)?;
        if !(self.advisor.request_timeout_s.is_finite() && self.advisor.request_timeout_s > 0.0) {
            return Err(ConfigError("advisor.request_timeout_s must be positive".into()));
        }
        Ok(())
    }
}
