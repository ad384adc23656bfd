// SPDX-License-Identifier: Apache-2.0
//! Tool registry and dispatch.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::Session;
use crate::advisor::AdvisorMode;
use crate::backend::{make_backend, Design, Strategy, DEFAULT_CLOCK_PERIOD_NS};
use crate::config::Settings;
use crate::docstore::DocStore;
use crate::metrics::Objective;
use crate::optimizer::{
    create_run_dir, history_table, render_history, run_optimization, run_sweep, summarize_deltas,
    OptimizationHistory, RunSpec,
};
use crate::report::emit_metrics_doc;

pub struct ToolDescriptor {
    pub name: &'static str,
    pub description: &'static str,
    pub input_schema: Value,
}

impl ToolDescriptor {
    pub fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema,
        })
    }
}

/// Output of a successful tool call.
pub struct ToolOutput {
    pub text: String,
    pub structured: Value,
}

fn design_properties() -> Map<String, Value> {
    let v = json!({
        "name": {"type": "string", "description": "Design name; defaults to top_module."},
        "rtl_sources": {"type": "array", "items": {"type": "string"}, "minItems": 1,
                        "description": "Verilog source files."},
        "top_module": {"type": "string"},
        "testbench": {"type": "string"},
        "clock_period_ns": {"type": "number", "minimum": 0},
        "clock_port": {"type": "string"},
        "mock_base_area_um2": {"type": "number", "minimum": 0,
                               "description": "Mock backend base area; hashed from the RTL when absent."},
        "mock_base_delay_ns": {"type": "number", "minimum": 0}
    });
    v.as_object().cloned().expect("object literal")
}

fn objective_property() -> Value {
    json!({"type": "string", "enum": ["TIMING", "AREA", "BALANCED", "timing", "area", "balanced"]})
}

fn schema(extra: Value, with_design: bool, required: &[&str]) -> Value {
    let mut props = if with_design { design_properties() } else { Map::new() };
    if let Value::Object(m) = extra {
        props.extend(m);
    }
    let mut req: Vec<&str> = if with_design { vec!["rtl_sources", "top_module"] } else { vec![] };
    req.extend_from_slice(required);
    json!({
        "type": "object",
        "properties": props,
        "required": req,
        "additionalProperties": false,
    })
}

pub fn registry() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor {
            name: "simulate_rtl",
            description: "Compile the RTL with its testbench and run the simulation. Passes when the log has no FAIL token.",
            input_schema: schema(json!({}), true, &["testbench"]),
        },
        ToolDescriptor {
            name: "synthesize",
            description: "Synthesize the design with a fixed strategy (\"DELAY 0\"..\"DELAY 4\", \"AREA 0\"..\"AREA 3\") or a custom ABC script.",
            input_schema: schema(json!({"strategy": {"type": "string"}}), true, &[]),
        },
        ToolDescriptor {
            name: "run_backend",
            description: "Place and route a synthesized netlist and return post-layout metrics.",
            input_schema: schema(json!({"netlist": {"type": "string"}}), true, &["netlist"]),
        },
        ToolDescriptor {
            name: "sweep_baseline",
            description: "Evaluate the nine fixed synthesis strategies and pick the baseline for an objective.",
            input_schema: schema(json!({"objective": objective_property()}), true, &[]),
        },
        ToolDescriptor {
            name: "optimize_design",
            description: "Run the sweep and then iterative script refinement until convergence. Returns the final metrics and the history path.",
            input_schema: schema(
                json!({
                    "objective": objective_property(),
                    "advisor": {"type": "string", "enum": ["heuristic", "remote", "no-feedback"]},
                    "max_iterations": {"type": "integer", "minimum": 1},
                    "patience": {"type": "integer", "minimum": 1},
                    "target": {"type": "number", "minimum": 0},
                    "constraints": {"type": "string"}
                }),
                true,
                &[],
            ),
        },
        ToolDescriptor {
            name: "query_docs",
            description: "Search the synthesis documentation snippets (BM25).",
            input_schema: schema(
                json!({"query": {"type": "string"}, "k": {"type": "integer", "minimum": 1}}),
                false,
                &["query"],
            ),
        },
        ToolDescriptor {
            name: "get_history",
            description: "Return an optimization history by design name (runs from this session) or by file path.",
            input_schema: schema(
                json!({"design": {"type": "string"}, "history_path": {"type": "string"}}),
                false,
                &[],
            ),
        },
        ToolDescriptor {
            name: "report_table",
            description: "Comparison table (per-design delay and area, GeoMean and Ratio rows) over finished runs.",
            input_schema: schema(
                json!({
                    "history_paths": {"type": "array", "items": {"type": "string"}},
                    "format": {"type": "string", "enum": ["text", "csv"]}
                }),
                false,
                &[],
            ),
        },
    ]
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

fn design_from(args: &Value) -> Result<Design, String> {
    let top = str_arg(args, "top_module").unwrap_or_default().to_string();
    let design = Design {
        name: str_arg(args, "name").map_or_else(|| top.clone(), str::to_string),
        rtl_sources: args["rtl_sources"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(PathBuf::from).collect())
            .unwrap_or_default(),
        top_module: top,
        testbench: str_arg(args, "testbench").map(PathBuf::from),
        clock_period_ns: args
            .get("clock_period_ns")
            .and_then(Value::as_f64)
            .unwrap_or(DEFAULT_CLOCK_PERIOD_NS),
        clock_port: str_arg(args, "clock_port").map(str::to_string),
        mock_base_area_um2: args.get("mock_base_area_um2").and_then(Value::as_f64),
        mock_base_delay_ns: args.get("mock_base_delay_ns").and_then(Value::as_f64),
    };
    design.validate().map_err(|e| e.to_string())?;
    Ok(design)
}

fn objective_from(args: &Value, settings: &Settings) -> Result<Objective, String> {
    str_arg(args, "objective").map_or(Ok(settings.objective), str::parse)
}

/// A fresh working directory under `runs_dir/<design>/`.
fn scratch_dir(settings: &Settings, design: &Design, kind: &str) -> Result<PathBuf, String> {
    let dir = create_run_dir(&settings.runs_dir, &design.name).map_err(|e| e.to_string())?;
    Ok(dir.join(kind))
}

fn history_result(h: &OptimizationHistory, path: &Path) -> ToolOutput {
    let base = h.baseline();
    ToolOutput {
        text: render_history(h, path),
        structured: json!({
            "history_path": path.display().to_string(),
            "status": h.status,
            "records": h.records.len(),
            "refine_records": h.refine_count(),
            "baseline_index": h.baseline_index,
            "final_metrics": base.map(|b| b.metrics),
            "deltas": summarize_deltas(h),
        }),
    }
}

pub fn call(
    name: &str,
    args: &Value,
    settings: &Settings,
    docs: &DocStore,
    session: &mut Session,
) -> Result<ToolOutput, String> {
    match name {
        "simulate_rtl" => {
            let design = design_from(args)?;
            let backend = make_backend(&settings.backend);
            let dir = scratch_dir(settings, &design, "sim")?;
            let r = backend.simulate(&design, &dir).map_err(|e| e.to_string())?;
            Ok(ToolOutput {
                text: format!(
                    "simulation {}\nlog: {}\n",
                    if r.passed { "passed" } else { "FAILED" },
                    r.log.display()
                ),
                structured: serde_json::to_value(&r).expect("serializable"),
            })
        }
        "synthesize" => {
            let design = design_from(args)?;
            let strategy: Strategy = str_arg(args, "strategy")
                .unwrap_or("DELAY 0")
                .parse()
                .map_err(|e: crate::backend::BackendError| e.to_string())?;
            let backend = make_backend(&settings.backend);
            let dir = scratch_dir(settings, &design, "synth")?;
            let out = backend.synthesize(&design, &strategy, &dir).map_err(|e| e.to_string())?;
            Ok(ToolOutput {
                text: format!(
                    "synthesized {} with {}: {} cells\nnetlist: {}\n",
                    design.top_module,
                    strategy.label(),
                    out.stats.num_cells,
                    out.netlist.display()
                ),
                structured: json!({
                    "netlist": out.netlist.display().to_string(),
                    "num_cells": out.stats.num_cells,
                    "cell_area_um2": out.stats.cell_area_um2,
                    "top_module": out.stats.top_module,
                }),
            })
        }
        "run_backend" => {
            let design = design_from(args)?;
            let netlist = PathBuf::from(str_arg(args, "netlist").unwrap_or_default());
            let backend = make_backend(&settings.backend);
            let dir = scratch_dir(settings, &design, "backend")?;
            let m = backend.run_backend(&netlist, &design, &dir).map_err(|e| e.to_string())?;
            Ok(ToolOutput {
                text: emit_metrics_doc(&m),
                structured: serde_json::to_value(m).expect("serializable"),
            })
        }
        "sweep_baseline" => {
            let design = design_from(args)?;
            let objective = objective_from(args, settings)?;
            let backend = make_backend(&settings.backend);
            let spec = RunSpec {
                design: &design,
                backend: backend.as_ref(),
                objective,
                mode: "sweep",
                runs_root: &settings.runs_dir,
                config: settings.loop_config,
                constraints: "",
                cancel: None,
            };
            let (path, h) = run_sweep(&spec).map_err(|e| e.to_string())?;
            session.histories.insert(design.name.clone(), path.clone());
            Ok(history_result(&h, &path))
        }
        "optimize_design" => {
            let design = design_from(args)?;
            let objective = objective_from(args, settings)?;
            let mut advisor_cfg = settings.advisor.clone();
            if let Some(m) = str_arg(args, "advisor") {
                advisor_cfg.mode = m.parse::<AdvisorMode>()?;
            }
            if let Some(c) = str_arg(args, "constraints") {
                advisor_cfg.constraints = c.to_string();
            }
            let mut config = settings.loop_config;
            if let Some(n) = args.get("max_iterations").and_then(Value::as_u64) {
                config.max_iterations = n as usize;
            }
            if let Some(n) = args.get("patience").and_then(Value::as_u64) {
                config.patience = n as usize;
            }
            if let Some(t) = args.get("target").and_then(Value::as_f64) {
                config.target = Some(t);
            }
            config.single_proposal = advisor_cfg.mode == AdvisorMode::NoFeedback;
            config.validate()?;
            let mut advisor = advisor_cfg.build().map_err(|e| e.to_string())?;
            let backend = make_backend(&settings.backend);
            let spec = RunSpec {
                design: &design,
                backend: backend.as_ref(),
                objective,
                mode: advisor_cfg.mode.as_str(),
                runs_root: &settings.runs_dir,
                config,
                constraints: &advisor_cfg.constraints,
                cancel: None,
            };
            let docs = (!docs.is_empty()).then_some(docs);
            let (path, h) =
                run_optimization(&spec, advisor.as_mut(), docs).map_err(|e| e.to_string())?;
            session.histories.insert(design.name.clone(), path.clone());
            Ok(history_result(&h, &path))
        }
        "query_docs" => {
            let query = str_arg(args, "query").unwrap_or_default();
            let k = args.get("k").and_then(Value::as_u64).unwrap_or(3) as usize;
            let hits = docs.query(query, k).map_err(|e| e.to_string())?;
            let mut text = String::new();
            let mut items = Vec::new();
            for (rank, h) in hits.iter().enumerate() {
                text.push_str(&format!(
                    "{}. [{}#{}] score {:.4}\n{}\n\n",
                    rank + 1,
                    h.chunk.doc_id,
                    h.chunk.chunk_index,
                    h.score,
                    h.chunk.text.trim()
                ));
                items.push(json!({
                    "doc_id": h.chunk.doc_id,
                    "chunk_index": h.chunk.chunk_index,
                    "score": h.score,
                    "text": h.chunk.text,
                }));
            }
            if hits.is_empty() {
                text.push_str("no matching snippets\n");
            }
            Ok(ToolOutput {
                text,
                structured: json!({ "snippets": items }),
            })
        }
        "get_history" => {
            let path = match (str_arg(args, "history_path"), str_arg(args, "design")) {
                (Some(p), _) => PathBuf::from(p),
                (None, Some(d)) => session
                    .histories
                    .get(d)
                    .cloned()
                    .ok_or_else(|| format!("no run for design `{d}` in this session"))?,
                (None, None) => return Err("give either `design` or `history_path`".into()),
            };
            let h = OptimizationHistory::load(&path).map_err(|e| e.to_string())?;
            Ok(ToolOutput {
                text: h.to_json(),
                structured: serde_json::to_value(&h).expect("serializable"),
            })
        }
        "report_table" => {
            let paths: Vec<PathBuf> = match args.get("history_paths").and_then(Value::as_array) {
                Some(a) => a.iter().filter_map(Value::as_str).map(PathBuf::from).collect(),
                None => session.histories.values().cloned().collect(),
            };
            if paths.is_empty() {
                return Err("no histories to report".into());
            }
            let histories = paths
                .iter()
                .map(|p| OptimizationHistory::load(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let table = history_table(&histories).map_err(|e| e.to_string())?;
            let text = match str_arg(args, "format") {
                Some("csv") => table.to_csv(),
                _ => table.to_text(),
            };
            Ok(ToolOutput {
                text,
                structured: json!({
                    "columns": table.columns,
                    "geomean_delay": table.geomean_delay,
                    "geomean_area": table.geomean_area,
                    "ratio_delay": table.ratio_delay,
                    "ratio_area": table.ratio_area,
                }),
            })
        }
        other => Err(format!("unknown tool `{other}`")),
    }
}
