// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BackendError;

pub const DEFAULT_CLOCK_PERIOD_NS: f64 = 10.0;

fn default_clock() -> f64 {
    DEFAULT_CLOCK_PERIOD_NS
}

/// A design under optimization. Loaded from a TOML design file or from
/// tool-call arguments; relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub name: String,
    pub rtl_sources: Vec<PathBuf>,
    pub top_module: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub testbench: Option<PathBuf>,
    #[serde(default = "default_clock")]
    pub clock_period_ns: f64,
    /// Clock port name handed to the flow runner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_port: Option<String>,
    /// Explicit mock model parameters; hashed from the RTL when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_base_area_um2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_base_delay_ns: Option<f64>,
}

pub(crate) fn is_filesystem_safe(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Design {
    pub fn load(path: &Path) -> Result<Design, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Design(format!("cannot read design file {}: {e}", path.display()))
        })?;
        let mut design: Design = toml::from_str(&text)
            .map_err(|e| BackendError::Design(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        design.resolve_paths(base);
        design.validate()?;
        Ok(design)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.rtl_sources.iter_mut().for_each(fix);
        if let Some(tb) = self.testbench.as_mut() {
            fix(tb);
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !is_filesystem_safe(&self.name) {
            return Err(BackendError::Design(format!(
                "design name `{}` must match [A-Za-z0-9_.-]+ and not start with `.`",
                self.name
            )));
        }
        if self.rtl_sources.is_empty() {
            return Err(BackendError::Design("at least one RTL source is required".into()));
        }
        if self.top_module.trim().is_empty() {
            return Err(BackendError::Design("top_module must not be empty".into()));
        }
        if !(self.clock_period_ns.is_finite() && self.clock_period_ns > 0.0) {
            return Err(BackendError::Design("clock_period_ns must be positive".into()));
        }
        match (self.mock_base_area_um2, self.mock_base_delay_ns) {
            (None, None) => {}
            (Some(a), Some(d)) if a.is_finite() && a > 0.0 && d.is_finite() && d > 0.0 => {}
            _ => {
                return Err(BackendError::Design(
                    "mock_base_area_um2 and mock_base_delay_ns must be given together and be positive"
                        .into(),
                ))
            }
        }
        Ok(())
    }

    /// Concatenated RTL text, in source order.
    pub fn source_text(&self) -> Result<String, BackendError> {
        let mut text = String::new();
        for src in &self.rtl_sources {
            let part = std::fs::read_to_string(src).map_err(|e| {
                BackendError::Environment(format!("cannot read RTL source {}: {e}", src.display()))
            })?;
            text.push_str(&part);
        }
        Ok(text)
    }
}
