// SPDX-License-Identifier: Apache-2.0
//! Three-phase optimization: fixed-strategy sweep, advisor proposal, and
//! accept/reject refinement against measured backend metrics.

mod history;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use thiserror::Error;

pub use history::{
    check_convergence, summarize_deltas, Convergence, IterationRecord, LoopConfig,
    OptimizationHistory, Phase, RunStatus, SCHEMA_VERSION,
    render_history,
};

use crate::abc::AbcScript;
use crate::advisor::{
    heuristic_propose_excluding, Advisor, AdvisorError, AdvisorProposal, AdvisorRequest, Snippet,
};
use crate::backend::{BackendError, Design, Strategy, ToolBackend};
use crate::docstore::DocStore;
use crate::metrics::{
    compare, ratio_table, ComparisonTable, MetricsError, Objective, ReferencePoint, TableRow,
};

pub const HISTORY_FILE: &str = "history.json";
const RECENT_RECORDS: usize = 5;
const SNIPPETS: usize = 3;
const MAX_CONSECUTIVE_FAILURES: usize = 3;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("{source} (history kept at {})", history.display())]
    Backend {
        #[source]
        source: BackendError,
        history: PathBuf,
    },
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no untried candidate script left")]
    Exhausted,
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl OptimizerError {
    pub fn is_environment(&self) -> bool {
        matches!(self, OptimizerError::Backend { source, .. } if source.is_environment())
    }
}

/// Where a run lives and what it runs against.
pub struct RunContext<'a> {
    pub design: &'a Design,
    pub backend: &'a dyn ToolBackend,
    pub run_dir: PathBuf,
    pub cancel: Option<&'a AtomicBool>,
}

impl RunContext<'_> {
    pub fn history_path(&self) -> PathBuf {
        self.run_dir.join(HISTORY_FILE)
    }

    fn iter_dir(&self, index: usize) -> PathBuf {
        self.run_dir.join(format!("iter_{index}"))
    }

    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn save(&self, history: &OptimizationHistory) -> Result<(), OptimizerError> {
        history.save(&self.history_path())
    }
}

/// Creates `runs_root/<design>/<UTC timestamp>`, suffixing on collision.
pub fn create_run_dir(runs_root: &Path, design_name: &str) -> Result<PathBuf, OptimizerError> {
    let parent = runs_root.join(design_name);
    std::fs::create_dir_all(&parent)
        .map_err(|e| OptimizerError::Io(format!("{}: {e}", parent.display())))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string();
    for n in 0.. {
        let name = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(OptimizerError::Io(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn script_of(strategy: &Strategy) -> Result<AbcScript, OptimizerError> {
    strategy.to_script().map_err(|e| OptimizerError::InvalidHistory(e.to_string()))
}

/// Runs the nine fixed presets into `history`, skipping presets already
/// recorded, then fixes the reference point and the baseline.
pub fn phase1_sweep(
    ctx: &RunContext<'_>,
    history: &mut OptimizationHistory,
) -> Result<(), OptimizerError> {
    for strategy in Strategy::sweep_presets() {
        let hash = script_of(&strategy)?.canonical_hash();
        if history.tried_hashes.contains(&hash) {
            continue;
        }
        let index = history.records.len();
        log::info!("sweep {}: {}", index, strategy.label());
        let eval = match ctx.backend.evaluate(ctx.design, &strategy, &ctx.iter_dir(index)) {
            Ok(e) => e,
            Err(source) => {
                history.status = RunStatus::Aborted;
                ctx.save(history)?;
                return Err(OptimizerError::Backend {
                    source,
                    history: ctx.history_path(),
                });
            }
        };
        history.tried_hashes.insert(hash);
        history.records.push(IterationRecord {
            index,
            strategy,
            script_hash: hash,
            metrics: eval.metrics,
            accepted: false,
            phase: Phase::Sweep,
            advisor_provenance: None,
        });
        ctx.save(history)?;
    }
    if history.reference.is_none() {
        let min = |f: fn(&IterationRecord) -> f64| {
            history.sweep_records().map(f).fold(f64::INFINITY, f64::min)
        };
        history.reference = Some(ReferencePoint::new(
            min(|r| r.metrics.critical_path_ns),
            min(|r| r.metrics.area_um2),
        )?);
        let best = history
            .sweep_best_index()?
            .ok_or_else(|| OptimizerError::InvalidHistory("sweep produced no records".into()))?;
        history.records[best].accepted = true;
        history.baseline_index = Some(best);
        ctx.save(history)?;
    }
    Ok(())
}

/// Query text used to pull documentation for an objective.
fn doc_query(objective: Objective) -> &'static str {
    match objective {
        Objective::Timing => "timing delay critical path buffer map balance",
        Objective::Area => "area reduction remapping map cells",
        Objective::Balanced => "timing delay area trade-off map balance buffer",
    }
}

pub fn build_request(
    history: &OptimizationHistory,
    docs: Option<&DocStore>,
    constraints: &str,
) -> Result<AdvisorRequest, OptimizerError> {
    let base = history
        .baseline()
        .ok_or_else(|| OptimizerError::InvalidHistory("no baseline record".into()))?;
    let snippets = match docs {
        Some(d) => d
            .query(doc_query(history.objective), SNIPPETS)
            .map_err(|e| OptimizerError::Io(e.to_string()))?
            .into_iter()
            .map(|s| Snippet {
                doc_id: s.chunk.doc_id,
                chunk_index: s.chunk.chunk_index,
                text: s.chunk.text,
                score: s.score,
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(AdvisorRequest {
        objective: history.objective,
        best_script: script_of(&base.strategy)?,
        recent_records: history.recent_summaries(RECENT_RECORDS),
        snippets,
        constraints: constraints.to_string(),
        iteration: history.refine_count(),
    })
}

/// Asks the advisor for an untried script. Duplicates are re-requested up
/// to `duplicate_retries` times, then the rule table supplies the first
/// untried candidate.
pub fn phase2_propose(
    history: &OptimizationHistory,
    docs: Option<&DocStore>,
    advisor: &mut dyn Advisor,
    config: &LoopConfig,
    constraints: &str,
) -> Result<AdvisorProposal, OptimizerError> {
    let req = build_request(history, docs, constraints)?;
    for attempt in 0..config.duplicate_retries {
        let p = advisor.propose(&req)?;
        if !history.tried_hashes.contains(&p.script.canonical_hash()) {
            return Ok(p);
        }
        log::info!("proposal {} already tried (attempt {})", p.script, attempt + 1);
    }
    untried_heuristic(history, &req)
}

fn untried_heuristic(
    history: &OptimizationHistory,
    req: &AdvisorRequest,
) -> Result<AdvisorProposal, OptimizerError> {
    let tried: HashSet<u64> = history.tried_hashes.iter().copied().collect();
    heuristic_propose_excluding(req, &tried).ok_or(OptimizerError::Exhausted)
}

/// Refines until convergence, persisting after every record. Returns the
/// final status, which is also stored in the history.
pub fn phase3_iterate(
    ctx: &RunContext<'_>,
    history: &mut OptimizationHistory,
    advisor: &mut dyn Advisor,
    docs: Option<&DocStore>,
    config: &LoopConfig,
    constraints: &str,
) -> Result<RunStatus, OptimizerError> {
    if history.baseline().is_none() || history.reference.is_none() {
        return Err(OptimizerError::InvalidHistory("refinement needs a completed sweep".into()));
    }
    let reference = history.reference.expect("checked above");
    let mut failures = 0;
    let mut proposals = 0;
    let finish = |history: &mut OptimizationHistory, status: RunStatus| {
        history.status = status;
        ctx.save(history).map(|()| status)
    };
    loop {
        let decision = check_convergence(history, config);
        if decision != Convergence::Continue {
            return finish(history, decision.status());
        }
        if config.single_proposal && proposals >= 1 {
            return finish(history, RunStatus::StoppedMaxIter);
        }
        if ctx.cancelled() {
            return finish(history, RunStatus::Aborted);
        }
        let proposal = match phase2_propose(history, docs, advisor, config, constraints) {
            Ok(p) => p,
            Err(OptimizerError::Advisor(e)) => {
                log::warn!("advisor failed, using rule table: {e}");
                match untried_heuristic(history, &build_request(history, docs, constraints)?) {
                    Ok(p) => p,
                    Err(OptimizerError::Exhausted) => return finish(history, RunStatus::Exhausted),
                    Err(e) => return Err(e),
                }
            }
            Err(OptimizerError::Exhausted) => return finish(history, RunStatus::Exhausted),
            Err(e) => return Err(e),
        };
        proposals += 1;
        let hash = proposal.script.canonical_hash();
        let index = history.records.len();
        let strategy = Strategy::Custom {
            script: proposal.script,
        };
        log::info!("refine {index} ({}): {}", proposal.provenance, strategy);
        history.tried_hashes.insert(hash);
        let metrics = match ctx.backend.evaluate(ctx.design, &strategy, &ctx.iter_dir(index)) {
            Ok(e) => e.metrics,
            Err(source) if source.is_environment() => {
                finish(history, RunStatus::Aborted)?;
                return Err(OptimizerError::Backend {
                    source,
                    history: ctx.history_path(),
                });
            }
            Err(source) => {
                log::warn!("candidate {} failed: {source}", strategy);
                history.failed_hashes.insert(hash);
                failures += 1;
                ctx.save(history)?;
                if failures > MAX_CONSECUTIVE_FAILURES {
                    return finish(history, RunStatus::Aborted);
                }
                continue;
            }
        };
        failures = 0;
        let base = history.baseline().expect("checked above").metrics;
        let cmp = compare(&metrics, &base, history.objective, &reference)?;
        history.records.push(IterationRecord {
            index,
            strategy,
            script_hash: hash,
            metrics,
            accepted: cmp.accepted,
            phase: Phase::Refine,
            advisor_provenance: Some(proposal.provenance.to_string()),
        });
        if cmp.accepted {
            history.baseline_index = Some(index);
        }
        ctx.save(history)?;
    }
}

/// Sweep plus refinement in a fresh run directory under `runs_root`.
pub struct RunSpec<'a> {
    pub design: &'a Design,
    pub backend: &'a dyn ToolBackend,
    pub objective: Objective,
    pub mode: &'a str,
    pub runs_root: &'a Path,
    pub config: LoopConfig,
    pub constraints: &'a str,
    pub cancel: Option<&'a AtomicBool>,
}

pub fn run_sweep(spec: &RunSpec<'_>) -> Result<(PathBuf, OptimizationHistory), OptimizerError> {
    let ctx = RunContext {
        design: spec.design,
        backend: spec.backend,
        run_dir: create_run_dir(spec.runs_root, &spec.design.name)?,
        cancel: spec.cancel,
    };
    let mut history = OptimizationHistory::new(&spec.design.name, spec.objective, spec.mode);
    phase1_sweep(&ctx, &mut history)?;
    Ok((ctx.history_path(), history))
}

pub fn run_optimization(
    spec: &RunSpec<'_>,
    advisor: &mut dyn Advisor,
    docs: Option<&DocStore>,
) -> Result<(PathBuf, OptimizationHistory), OptimizerError> {
    let ctx = RunContext {
        design: spec.design,
        backend: spec.backend,
        run_dir: create_run_dir(spec.runs_root, &spec.design.name)?,
        cancel: spec.cancel,
    };
    let mut history = OptimizationHistory::new(&spec.design.name, spec.objective, spec.mode);
    phase1_sweep(&ctx, &mut history)?;
    phase3_iterate(&ctx, &mut history, advisor, docs, &spec.config, spec.constraints)?;
    Ok((ctx.history_path(), history))
}

/// Continues a run from its `history.json`, finishing the sweep first if needed.
#[allow(clippy::too_many_arguments)]
pub fn resume(
    history_path: &Path,
    design: &Design,
    backend: &dyn ToolBackend,
    advisor: &mut dyn Advisor,
    docs: Option<&DocStore>,
    config: &LoopConfig,
    constraints: &str,
    cancel: Option<&AtomicBool>,
) -> Result<OptimizationHistory, OptimizerError> {
    let mut history = OptimizationHistory::load(history_path)?;
    if history.design_name != design.name {
        return Err(OptimizerError::InvalidHistory(format!(
            "history belongs to design `{}`, not `{}`",
            history.design_name, design.name
        )));
    }
    let run_dir = history_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = RunContext {
        design,
        backend,
        run_dir,
        cancel,
    };
    history.status = RunStatus::Running;
    phase1_sweep(&ctx, &mut history)?;
    phase3_iterate(&ctx, &mut history, advisor, docs, config, constraints)?;
    Ok(history)
}

/// Comparison table over finished runs: one column per proposer mode (first
/// seen first), one row per design, each cell the run's final baseline. A
/// later history for the same design and mode replaces an earlier one.
pub fn history_table(histories: &[OptimizationHistory]) -> Result<ComparisonTable, OptimizerError> {
    let mut columns: Vec<String> = Vec::new();
    let mut designs: Vec<String> = Vec::new();
    let mut cells = std::collections::HashMap::new();
    for h in histories {
        let base = h.baseline().ok_or_else(|| {
            OptimizerError::InvalidHistory(format!("history of `{}` has no baseline", h.design_name))
        })?;
        if !columns.contains(&h.mode) {
            columns.push(h.mode.clone());
        }
        if !designs.contains(&h.design_name) {
            designs.push(h.design_name.clone());
        }
        cells.insert((h.design_name.clone(), h.mode.clone()), base.metrics);
    }
    let mut rows = Vec::with_capacity(designs.len());
    for d in designs {
        let mut row = TableRow { design: d.clone(), delay_ns: vec![], area_um2: vec![] };
        for c in &columns {
            let m = cells.get(&(d.clone(), c.clone())).ok_or_else(|| {
                OptimizerError::InvalidHistory(format!("no `{c}` history for design `{d}`"))
            })?;
            row.delay_ns.push(m.critical_path_ns);
            row.area_um2.push(m.area_um2);
        }
        rows.push(row);
    }
    Ok(ratio_table(columns, rows)?)
}
