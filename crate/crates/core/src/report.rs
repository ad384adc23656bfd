// SPDX-License-Identifier: Apache-2.0
//! Parsers for synthesis statistics, timing summaries and the canonical
//! metrics document, plus the adapter that normalizes flow-runner metrics.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::metrics::BackendMetrics;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("metrics document is missing required key(s): {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("metrics document key `{key}`: {message}")]
    Type { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStats {
    pub num_cells: u64,
    pub cell_area_um2: Option<f64>,
    pub top_module: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatFormat {
    /// `stat -json` output.
    Structured,
    /// Human-readable `stat` log.
    Plain,
}

pub fn parse_yosys_stat(text: &str, format: StatFormat) -> Result<SynthStats, ReportError> {
    match format {
        StatFormat::Structured => parse_stat_json(text),
        StatFormat::Plain => parse_stat_plain(text),
    }
}

fn cell_count(v: &Value) -> Result<u64, ReportError> {
    match v {
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                Ok(u)
            } else {
                Err(ReportError::Malformed(format!("invalid num_cells {n}")))
            }
        }
        // newer releases quote some counters
        Value::String(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| ReportError::Malformed(format!("invalid num_cells `{s}`"))),
        other => Err(ReportError::Malformed(format!("invalid num_cells {other}"))),
    }
}

fn area_value(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn strip_escape(name: &str) -> String {
    name.strip_prefix('\\').unwrap_or(name).to_string()
}

fn parse_stat_json(text: &str) -> Result<SynthStats, ReportError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| ReportError::Malformed(format!("stat json: {e}")))?;
    let modules = doc.get("modules").and_then(Value::as_object);
    let design = doc.get("design").and_then(Value::as_object);

    let single_module = modules.filter(|m| m.len() == 1).and_then(|m| m.iter().next());
    let source = design.or(single_module.and_then(|(_, v)| v.as_object()));
    let source = source.ok_or_else(|| ReportError::Malformed("no design section".into()))?;

    let num_cells = source
        .get("num_cells")
        .ok_or_else(|| ReportError::Malformed("missing num_cells".into()))
        .and_then(cell_count)?;
    let cell_area_um2 = source.get("area").and_then(area_value);
    let top_module = design
        .and_then(|d| d.get("top"))
        .and_then(Value::as_str)
        .map(strip_escape)
        .or_else(|| single_module.map(|(k, _)| strip_escape(k)))
        .unwrap_or_default();
    Ok(SynthStats {
        num_cells,
        cell_area_um2,
        top_module,
    })
}

fn parse_stat_plain(text: &str) -> Result<SynthStats, ReportError> {
    let mut num_cells = None;
    let mut area = None;
    let mut top = None;
    for line in text.lines() {
        let t = line.trim();
        if top.is_none() {
            if let Some(name) = t.strip_prefix("===").and_then(|r| r.strip_suffix("===")) {
                top = Some(strip_escape(name.trim()));
            }
        }
        if num_cells.is_none() {
            if let Some(rest) = t.strip_prefix("Number of cells:") {
                let raw = rest.trim();
                let n: i64 = raw
                    .parse()
                    .map_err(|_| ReportError::Malformed(format!("invalid cell count `{raw}`")))?;
                if n < 0 {
                    return Err(ReportError::Malformed(format!("negative cell count {n}")));
                }
                num_cells = Some(n as u64);
            } else if let Some(raw) = t.strip_suffix(" cells") {
                // recent releases print "<n> cells" in the summary table
                if let Ok(n) = raw.trim().parse::<u64>() {
                    num_cells = Some(n);
                }
            }
        }
        if area.is_none() {
            if let Some(rest) = t.strip_prefix("Chip area for module") {
                if let Some((name, value)) = rest.rsplit_once(':') {
                    area = value.trim().parse::<f64>().ok();
                    if top.is_none() {
                        top = Some(strip_escape(name.trim().trim_matches('\'')));
                    }
                }
            }
        }
    }
    let num_cells = num_cells.ok_or_else(|| ReportError::Malformed("missing num_cells".into()))?;
    Ok(SynthStats {
        num_cells,
        cell_area_um2: area,
        top_module: top.unwrap_or_default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaSummary {
    pub wns_ns: f64,
    pub tns_ns: f64,
    pub critical_path_ns: f64,
}

/// Canonical STA text: `wns <real>`, `tns <real>`, `critical_path <real>`,
/// `#` comments. First occurrence of each key wins; other lines are ignored.
pub fn parse_sta_report(text: &str) -> Result<StaSummary, ReportError> {
    let mut wns = None;
    let mut tns = None;
    let mut cp = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let slot = match key {
            "wns" => &mut wns,
            "tns" => &mut tns,
            "critical_path" => &mut cp,
            _ => continue,
        };
        if slot.is_some() {
            continue;
        }
        let v: f64 = value.parse().map_err(|_| {
            ReportError::Malformed(format!("line {}: non-numeric {key} value `{value}`", lineno + 1))
        })?;
        if !v.is_finite() {
            return Err(ReportError::Malformed(format!("line {}: non-finite {key}", lineno + 1)));
        }
        *slot = Some(v);
    }
    let wns_ns = wns.ok_or_else(|| ReportError::Malformed("no wns line".into()))?;
    let tns_ns = match tns {
        Some(t) => t,
        None if wns_ns >= 0.0 => 0.0,
        None => return Err(ReportError::Malformed("negative wns without a tns line".into())),
    };
    if tns_ns > 0.0 {
        return Err(ReportError::Malformed(format!("tns {tns_ns} is positive")));
    }
    let critical_path_ns =
        cp.ok_or_else(|| ReportError::Malformed("no critical_path line".into()))?;
    Ok(StaSummary {
        wns_ns,
        tns_ns,
        critical_path_ns,
    })
}

pub const METRIC_KEYS: [&str; 7] = [
    "area_um2",
    "critical_path_ns",
    "total_power_uw",
    "wns_ns",
    "tns_ns",
    "drc_violations",
    "runtime_s",
];

pub fn parse_metrics_doc(text: &str) -> Result<BackendMetrics, ReportError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| ReportError::Malformed(format!("metrics document: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| ReportError::Malformed("metrics document is not a JSON object".into()))?;
    metrics_from_object(obj)
}

fn metrics_from_object(obj: &Map<String, Value>) -> Result<BackendMetrics, ReportError> {
    let missing: Vec<String> = METRIC_KEYS
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ReportError::MissingKeys(missing));
    }
    let num = |key: &str| -> Result<f64, ReportError> {
        obj[key]
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ReportError::Type {
                key: key.to_string(),
                message: format!("expected a finite number, found {}", obj[key]),
            })
    };
    let drc = obj["drc_violations"].as_u64().ok_or_else(|| ReportError::Type {
        key: "drc_violations".into(),
        message: format!("expected a non-negative integer, found {}", obj["drc_violations"]),
    })?;
    let m = BackendMetrics {
        area_um2: num("area_um2")?,
        critical_path_ns: num("critical_path_ns")?,
        total_power_uw: num("total_power_uw")?,
        wns_ns: num("wns_ns")?,
        tns_ns: num("tns_ns")?,
        drc_violations: drc,
        runtime_s: num("runtime_s")?,
    };
    m.validate()
        .map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(m)
}

/// Canonical metrics document; [`parse_metrics_doc`] inverts it exactly.
pub fn emit_metrics_doc(m: &BackendMetrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Translates a flow-runner `final/metrics.json` (OpenLane 2 key names) into
/// [`BackendMetrics`]. Critical path is derived as `clock_period - setup WNS`;
/// power is converted from W to µW; DRC counts from every checker present are summed.
pub fn normalize_flow_metrics(
    text: &str,
    clock_period_ns: f64,
    runtime_s: f64,
) -> Result<BackendMetrics, ReportError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| ReportError::Malformed(format!("flow metrics: {e}")))?;
    let get = |key: &str| doc.get(key).and_then(area_value);
    let area = get("design__instance__area")
        .ok_or_else(|| ReportError::Malformed("flow metrics lack design__instance__area".into()))?;
    let ws = get("timing__setup__ws")
        .ok_or_else(|| ReportError::Malformed("flow metrics lack timing__setup__ws".into()))?;
    let tns = get("timing__setup__tns").unwrap_or(0.0).min(0.0);
    let power_w = get("power__total").unwrap_or(0.0);
    let drc: f64 = ["route__drc_errors", "magic__drc_error__count", "klayout__drc_error__count"]
        .iter()
        .filter_map(|k| get(k))
        .sum();
    let critical_path_ns = clock_period_ns - ws;
    if critical_path_ns <= 0.0 {
        return Err(ReportError::Malformed(format!(
            "setup slack {ws} ns exceeds clock period {clock_period_ns} ns"
        )));
    }
    let m = BackendMetrics {
        area_um2: area,
        critical_path_ns,
        total_power_uw: power_w * 1e6,
        wns_ns: ws,
        tns_ns: if ws >= 0.0 { 0.0 } else { tns },
        drc_violations: drc.max(0.0).round() as u64,
        runtime_s,
    };
    m.validate()
        .map_err(|e| ReportError::Malformed(e.to_string()))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_json_fixture() {
        let text = r#"{
          "creator": "Yosys 0.38",
          "invocation": "stat -json",
          "modules": { "\\top": { "num_wires": 50, "num_cells": 42, "area": 512.5 } },
          "design": { "num_wires": 50, "num_cells": 42, "area": 512.5 }
        }"#;
        let s = parse_yosys_stat(text, StatFormat::Structured).unwrap();
        assert_eq!(s.num_cells, 42);
        assert_eq!(s.cell_area_um2, Some(512.5));
        assert_eq!(s.top_module, "top");
    }

    #[test]
    fn stat_json_without_area_or_cells() {
        let s = parse_yosys_stat(r#"{"design": {"num_cells": 3}}"#, StatFormat::Structured).unwrap();
        assert_eq!((s.num_cells, s.cell_area_um2), (3, None));
        assert!(matches!(
            parse_yosys_stat(r#"{"design": {"num_wires": 3}}"#, StatFormat::Structured),
            Err(ReportError::Malformed(_))
        ));
        assert!(parse_yosys_stat(r#"{"design": {"num_cells": -3}}"#, StatFormat::Structured).is_err());
    }

    #[test]
    fn stat_plain_fixture() {
        let s = parse_yosys_stat("Number of cells:  7\n", StatFormat::Plain).unwrap();
        assert_eq!(s.num_cells, 7);
        assert_eq!(s.cell_area_um2, None);

        let log = "=== and2 ===\n\n   Number of wires:   3\n   Number of cells:   1\n     $_AND_   1\n\n   Chip area for module '\\and2': 6.256000\n";
        let s = parse_yosys_stat(log, StatFormat::Plain).unwrap();
        assert_eq!(s.num_cells, 1);
        assert_eq!(s.cell_area_um2, Some(6.256));
        assert_eq!(s.top_module, "and2");

        assert!(parse_yosys_stat("Number of cells: -2", StatFormat::Plain).is_err());
        assert!(parse_yosys_stat("nothing here", StatFormat::Plain).is_err());
    }

    #[test]
    fn sta_canonical() {
        let s = parse_sta_report("wns -0.12\ntns -1.20\ncritical_path 0.88").unwrap();
        assert_eq!((s.wns_ns, s.tns_ns, s.critical_path_ns), (-0.12, -1.20, 0.88));
        let s = parse_sta_report("# header\nwns 0.50\ncritical_path 0.86 # trailing").unwrap();
        assert_eq!((s.wns_ns, s.tns_ns, s.critical_path_ns), (0.50, 0.0, 0.86));
    }

    #[test]
    fn sta_first_occurrence_wins() {
        let s = parse_sta_report("wns -0.10\ntns -0.5\nwns -0.30\ncritical_path 1.1\ncritical_path 9").unwrap();
        assert_eq!(s.wns_ns, -0.10);
        assert_eq!(s.critical_path_ns, 1.1);
    }

    #[test]
    fn sta_errors() {
        assert!(matches!(parse_sta_report("tns -1\ncritical_path 1"), Err(ReportError::Malformed(_))));
        assert!(parse_sta_report("wns abc\ncritical_path 1").is_err());
        assert!(parse_sta_report("wns -0.1\ncritical_path 1").is_err());
        assert!(parse_sta_report("wns 0.1").is_err());
    }

    const SAMPLE_DOC: &str = r#"{"area_um2": 3913.75, "critical_path_ns": 0.86, "total_power_uw": 0.000538,
        "wns_ns": 9.14, "tns_ns": 0, "drc_violations": 0, "runtime_s": 61.5}"#;

    #[test]
    fn metrics_doc_sample() {
        let m = parse_metrics_doc(SAMPLE_DOC).unwrap();
        assert_eq!(m.area_um2, 3913.75);
        assert_eq!(m.critical_path_ns, 0.86);
        assert_eq!(m.total_power_uw, 0.000538);
    }

    #[test]
    fn metrics_doc_ignores_unknown_keys() {
        let text = SAMPLE_DOC.replace("{", "{\"congestion\": 0.4, ");
        assert_eq!(parse_metrics_doc(&text).unwrap(), parse_metrics_doc(SAMPLE_DOC).unwrap());
    }

    #[test]
    fn metrics_doc_missing_keys_listed() {
        let text = r#"{"critical_path_ns": 0.86, "total_power_uw": 0.1, "tns_ns": 0, "drc_violations": 0, "runtime_s": 0}"#;
        assert_eq!(
            parse_metrics_doc(text).unwrap_err(),
            ReportError::MissingKeys(vec!["area_um2".into(), "wns_ns".into()])
        );
    }

    #[test]
    fn metrics_doc_type_error_names_key() {
        let text = SAMPLE_DOC.replace("3913.75", "\"big\"");
        match parse_metrics_doc(&text).unwrap_err() {
            ReportError::Type { key, .. } => assert_eq!(key, "area_um2"),
            e => panic!("{e:?}"),
        }
        let text = SAMPLE_DOC.replace("\"drc_violations\": 0", "\"drc_violations\": 1.5");
        assert!(matches!(parse_metrics_doc(&text), Err(ReportError::Type { .. })));
    }

    #[test]
    fn flow_metrics_adapter() {
        let text = r#"{"design__instance__area": 4785.84, "timing__setup__ws": -0.47,
            "timing__setup__tns": -3.2, "power__total": 0.00058, "route__drc_errors": 0}"#;
        let m = normalize_flow_metrics(text, 1.0, 12.0).unwrap();
        assert!((m.critical_path_ns - 1.47).abs() < 1e-12);
        assert_eq!(m.tns_ns, -3.2);
        assert!((m.total_power_uw - 580.0).abs() < 1e-9);
        assert!(normalize_flow_metrics(r#"{"timing__setup__ws": 1}"#, 10.0, 0.0).is_err());
    }
}
