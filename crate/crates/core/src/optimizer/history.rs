// SPDX-License-Identifier: Apache-2.0
//! Persistent optimization history.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abc::hash_hex;
use crate::advisor::RecordSummary;
use crate::backend::Strategy;
use crate::metrics::{score, BackendMetrics, Objective, ReferencePoint};

use super::OptimizerError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Sweep,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub strategy: Strategy,
    #[serde(with = "hex_digest")]
    pub script_hash: u64,
    pub metrics: BackendMetrics,
    pub accepted: bool,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisor_provenance: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    ConvergedTarget,
    ConvergedPatience,
    StoppedMaxIter,
    /// Every candidate the proposers could produce was already tried.
    Exhausted,
    Aborted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::ConvergedTarget => "converged (target met)",
            RunStatus::ConvergedPatience => "converged (patience)",
            RunStatus::StoppedMaxIter => "stopped (iteration limit)",
            RunStatus::Exhausted => "stopped (no untried candidates)",
            RunStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationHistory {
    pub schema_version: u32,
    pub design_name: String,
    pub objective: Objective,
    /// Sweep minima; set once the sweep is complete.
    pub reference: Option<ReferencePoint>,
    /// Proposer label, used as the column name in comparison reports.
    pub mode: String,
    pub records: Vec<IterationRecord>,
    pub baseline_index: Option<usize>,
    #[serde(with = "hex_digest_set")]
    pub tried_hashes: BTreeSet<u64>,
    /// Scripts whose tool run failed; a subset of `tried_hashes`.
    #[serde(with = "hex_digest_set")]
    pub failed_hashes: BTreeSet<u64>,
    pub status: RunStatus,
}

mod hex_digest {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::abc::hash_hex(*h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        crate::abc::parse_hash_hex(&s).ok_or_else(|| D::Error::custom(format!("bad digest `{s}`")))
    }
}

mod hex_digest_set {
    use std::collections::BTreeSet;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(set: &BTreeSet<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(set.iter().map(|h| crate::abc::hash_hex(*h)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<u64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| {
                crate::abc::parse_hash_hex(&s)
                    .ok_or_else(|| D::Error::custom(format!("bad digest `{s}`")))
            })
            .collect()
    }
}

impl OptimizationHistory {
    pub fn new(design_name: &str, objective: Objective, mode: &str) -> Self {
        OptimizationHistory {
            schema_version: SCHEMA_VERSION,
            design_name: design_name.to_string(),
            objective,
            reference: None,
            mode: mode.to_string(),
            records: Vec::new(),
            baseline_index: None,
            tried_hashes: BTreeSet::new(),
            failed_hashes: BTreeSet::new(),
            status: RunStatus::Running,
        }
    }

    pub fn baseline(&self) -> Option<&IterationRecord> {
        self.baseline_index.and_then(|i| self.records.get(i))
    }

    pub fn sweep_records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Sweep)
    }

    pub fn refine_records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Refine)
    }

    pub fn refine_count(&self) -> usize {
        self.refine_records().count()
    }

    /// Score of a record under the history's objective.
    pub fn score_of(&self, r: &IterationRecord) -> Result<f64, OptimizerError> {
        let reference = self.reference.ok_or_else(|| {
            OptimizerError::InvalidHistory("reference point not set (sweep incomplete)".into())
        })?;
        Ok(score(&r.metrics, self.objective, &reference)?)
    }

    /// Best sweep record under the objective; a later record wins ties.
    pub fn sweep_best_index(&self) -> Result<Option<usize>, OptimizerError> {
        let mut best: Option<(usize, f64)> = None;
        for r in self.sweep_records() {
            let s = self.score_of(r)?;
            if best.is_none_or(|(_, b)| s <= b) {
                best = Some((r.index, s));
            }
        }
        Ok(best.map(|(i, _)| i))
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidHistory(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.index != i {
                return bad(format!("record at position {i} has index {}", r.index));
            }
            if !seen.insert(r.script_hash) {
                return bad(format!("script {} recorded twice", hash_hex(r.script_hash)));
            }
            if !self.tried_hashes.contains(&r.script_hash) {
                return bad(format!("record {i} missing from tried_hashes"));
            }
            if r.phase == Phase::Sweep && self.records[..i].iter().any(|p| p.phase == Phase::Refine) {
                return bad(format!("sweep record {i} follows a refine record"));
            }
            r.metrics
                .validate()
                .map_err(|e| OptimizerError::InvalidHistory(format!("record {i}: {e}")))?;
        }
        if !self.failed_hashes.is_subset(&self.tried_hashes) {
            return bad("failed_hashes not a subset of tried_hashes".into());
        }
        match self.baseline_index {
            None if self.refine_count() > 0 => bad("refine records without a baseline".into()),
            None => Ok(()),
            Some(b) if b >= self.records.len() => bad(format!("baseline_index {b} out of range")),
            Some(b) if !self.records[b].accepted => bad(format!("baseline record {b} not accepted")),
            Some(_) if self.reference.is_none() => bad("baseline set without reference".into()),
            Some(_) => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("history serializes");
        s.push('\n');
        s
    }

    /// Writes through a temporary file and a rename so a crash never leaves
    /// a torn document behind.
    pub fn save(&self, path: &Path) -> Result<(), OptimizerError> {
        let io = |e: std::io::Error| OptimizerError::Io(format!("{}: {e}", path.display()));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<OptimizationHistory, OptimizerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OptimizerError::Io(format!("{}: {e}", path.display())))?;
        let h: OptimizationHistory = serde_json::from_str(&text).map_err(|e| {
            OptimizerError::InvalidHistory(format!("{}: {e}", path.display()))
        })?;
        h.validate()?;
        Ok(h)
    }

    /// Timing reference for cumulative deltas: the sweep winner that opened refinement.
    fn delta_reference(&self) -> Option<&IterationRecord> {
        self.sweep_best_index().ok().flatten().map(|i| &self.records[i])
    }

    /// Digest of the last `n` records for the advisor.
    pub fn recent_summaries(&self, n: usize) -> Vec<RecordSummary> {
        let reference = self.delta_reference();
        let start = self.records.len().saturating_sub(n);
        self.records[start..]
            .iter()
            .map(|r| RecordSummary {
                index: r.index,
                delay_ns: r.metrics.critical_path_ns,
                area_um2: r.metrics.area_um2,
                power_uw: r.metrics.total_power_uw,
                accepted: r.accepted && r.phase == Phase::Refine,
                timing_improvement_ns: match (r.phase, reference) {
                    (Phase::Refine, Some(base)) => {
                        Some(base.metrics.critical_path_ns - r.metrics.critical_path_ns)
                    }
                    _ => None,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub patience: usize,
    /// Stop once the baseline score is at or below this value.
    pub target: Option<f64>,
    pub duplicate_retries: usize,
    /// Allow exactly one proposal and skip the feedback loop.
    pub single_proposal: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iterations: 10,
            patience: 3,
            target: None,
            duplicate_retries: 3,
            single_proposal: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 || self.patience == 0 || self.duplicate_retries == 0 {
            return Err("max_iterations, patience and duplicate_retries must be positive".into());
        }
        if let Some(t) = self.target {
            if !(t.is_finite() && t > 0.0) {
                return Err(format!("target must be a positive number, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Continue,
    ConvergedTarget,
    ConvergedPatience,
    StoppedMaxIter,
}

impl Convergence {
    pub fn status(self) -> RunStatus {
        match self {
            Convergence::Continue => RunStatus::Running,
            Convergence::ConvergedTarget => RunStatus::ConvergedTarget,
            Convergence::ConvergedPatience => RunStatus::ConvergedPatience,
            Convergence::StoppedMaxIter => RunStatus::StoppedMaxIter,
        }
    }
}

pub fn check_convergence(history: &OptimizationHistory, config: &LoopConfig) -> Convergence {
    if let (Some(target), Some(base)) = (config.target, history.baseline()) {
        if history.score_of(base).is_ok_and(|s| s <= target) {
            return Convergence::ConvergedTarget;
        }
    }
    let refine: Vec<&IterationRecord> = history.refine_records().collect();
    if refine.len() >= config.patience
        && refine[refine.len() - config.patience..].iter().all(|r| !r.accepted)
    {
        return Convergence::ConvergedPatience;
    }
    let limit = if config.single_proposal { 1 } else { config.max_iterations };
    if refine.len() >= limit {
        return Convergence::StoppedMaxIter;
    }
    Convergence::Continue
}

/// One line per accepted refine record. Timing is cumulative against the
/// sweep winner; area is the step change against the preceding record.
pub fn summarize_deltas(history: &OptimizationHistory) -> Vec<String> {
    let Some(reference) = history.delta_reference() else {
        return Vec::new();
    };
    history
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.phase == Phase::Refine && r.accepted)
        .map(|(i, r)| {
            let dt = reference.metrics.critical_path_ns - r.metrics.critical_path_ns;
            let prev = if i == 0 { reference } else { &history.records[i - 1] };
            let da = (prev.metrics.area_um2 - r.metrics.area_um2) / prev.metrics.area_um2 * 100.0;
            let timing = if dt >= 0.0 {
                format!("timing improvement {dt:.3}ns")
            } else {
                format!("timing degradation {:.3}ns", -dt)
            };
            let area = if da >= 0.0 {
                format!("area reduction {da:.1}%")
            } else {
                format!("area increase {:.1}%", -da)
            };
            format!("Iteration {}: {timing}, {area}", r.index)
        })
        .collect()
}

/// Human-readable run listing; the baseline record is starred.
pub fn render_history(h: &OptimizationHistory, path: &Path) -> String {
    let mut out = format!("design {} objective {} ({})\n", h.design_name, h.objective, h.mode);
    for r in &h.records {
        let star = if Some(r.index) == h.baseline_index { "*" } else { " " };
        out.push_str(&format!(
            "{star} {:>2} {:<6} {:<8} delay {:.4} ns  area {:.2} um2\n",
            r.index,
            format!("{:?}", r.phase).to_uppercase(),
            r.strategy.label(),
            r.metrics.critical_path_ns,
            r.metrics.area_um2
        ));
    }
    if let Some(b) = h.baseline() {
        out.push_str(&format!(
            "final delay {:.4} ns, area {:.2} um2, status {}\n",
            b.metrics.critical_path_ns,
            b.metrics.area_um2,
            h.status.as_str()
        ));
    }
    for line in summarize_deltas(h) {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(&format!("history: {}\n", path.display()));
    out
}
