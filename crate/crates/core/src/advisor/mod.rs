// SPDX-License-Identifier: Apache-2.0
//! Candidate ABC scripts from optimization state.
//!
//! Two proposers share one request shape: a deterministic rule table
//! ([`heuristic_propose`]) and a remote chat-completions model
//! ([`RemoteAdvisor`]) that falls back to the rule table when its replies
//! cannot be turned into a script.

mod heuristic;
mod prompt;
mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::AbcScript;
use crate::metrics::Objective;

pub use heuristic::{heuristic_candidates, heuristic_propose, heuristic_propose_excluding, Rule};
pub use prompt::{build_prompt, extract_script, FORMAT_REMINDER};
pub use remote::RemoteAdvisor;

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("advisor configuration error: {0}")]
    Configuration(String),
    #[error("advisor unreachable after {attempts} attempt(s): {message}")]
    Network { attempts: usize, message: String },
    #[error("no script found in advisor response ({reason}); response was:\n{response}")]
    Extraction { reason: String, response: String },
}

/// Per-record digest sent to the advisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub index: usize,
    pub delay_ns: f64,
    pub area_um2: f64,
    pub power_uw: f64,
    pub accepted: bool,
    /// Cumulative critical-path gain over the reference that opened refinement.
    pub timing_improvement_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorRequest {
    pub objective: Objective,
    pub best_script: AbcScript,
    /// At most five, ordered by index.
    pub recent_records: Vec<RecordSummary>,
    pub snippets: Vec<Snippet>,
    pub constraints: String,
    /// Number of refinement iterations already recorded.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Heuristic { rule: Rule },
    Remote { model: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Heuristic { rule } => write!(f, "heuristic:{rule}"),
            Provenance::Remote { model } => write!(f, "remote:{model}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorProposal {
    pub script: AbcScript,
    pub provenance: Provenance,
    pub raw_response: Option<String>,
}

pub trait Advisor {
    fn propose(&mut self, req: &AdvisorRequest) -> Result<AdvisorProposal, AdvisorError>;
}

/// The rule table as an [`Advisor`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAdvisor;

impl Advisor for HeuristicAdvisor {
    fn propose(&mut self, req: &AdvisorRequest) -> Result<AdvisorProposal, AdvisorError> {
        Ok(heuristic_propose(req))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvisorMode {
    #[default]
    Heuristic,
    Remote,
    /// One proposal from the sweep metrics, no feedback loop.
    NoFeedback,
}

impl AdvisorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdvisorMode::Heuristic => "heuristic",
            AdvisorMode::Remote => "remote",
            AdvisorMode::NoFeedback => "no-feedback",
        }
    }
}

impl FromStr for AdvisorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "heuristic" => Ok(AdvisorMode::Heuristic),
            "remote" => Ok(AdvisorMode::Remote),
            "no-feedback" | "no_feedback" => Ok(AdvisorMode::NoFeedback),
            other => Err(format!(
                "unknown advisor mode `{other}` (expected heuristic, remote or no-feedback)"
            )),
        }
    }
}

/// Which proposer supplies the single no-feedback proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoFeedbackProposer {
    #[default]
    Heuristic,
    Remote,
}

/// `[advisor]` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub mode: AdvisorMode,
    pub base_url: String,
    pub model: String,
    pub request_timeout_s: f64,
    pub max_tokens: u32,
    /// Environment variable holding the API credential.
    pub api_key_env: String,
    pub no_feedback_proposer: NoFeedbackProposer,
    /// Free-text goal forwarded in every request.
    pub constraints: String,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            mode: AdvisorMode::Heuristic,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            request_timeout_s: 60.0,
            max_tokens: 1024,
            api_key_env: "EDA_LOOP_API_KEY".into(),
            no_feedback_proposer: NoFeedbackProposer::Heuristic,
            constraints: String::new(),
        }
    }
}

impl AdvisorConfig {
    /// True when this configuration talks to a remote endpoint.
    pub fn uses_remote(&self) -> bool {
        match self.mode {
            AdvisorMode::Remote => true,
            AdvisorMode::NoFeedback => self.no_feedback_proposer == NoFeedbackProposer::Remote,
            AdvisorMode::Heuristic => false,
        }
    }

    /// Builds the proposer this configuration selects. Remote proposers read
    /// their credential here, so a missing key fails before any iteration.
    pub fn build(&self) -> Result<Box<dyn Advisor + Send>, AdvisorError> {
        if self.uses_remote() {
            Ok(Box::new(RemoteAdvisor::from_env(self.clone())?))
        } else {
            Ok(Box::new(HeuristicAdvisor))
        }
    }
}
