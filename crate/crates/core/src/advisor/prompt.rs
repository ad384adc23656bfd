// SPDX-License-Identifier: Apache-2.0
//! Prompt text and reply parsing for the remote proposer.

use std::fmt::Write;

use super::{AdvisorError, AdvisorRequest};
use crate::abc::{parse_script, AbcScript};

pub const FORMAT_REMINDER: &str = "Your previous reply did not contain a usable script. \
Reply with exactly one fenced code block holding a single line of ABC commands separated by `;`, \
for example:\n```\nstrash;dch;map -B 0.85;buffer -c -N 4\n```";

fn format_power(p: f64) -> String {
    if p.abs() < 1.0 {
        format!("{p:.6}")
    } else {
        format!("{p:.2}")
    }
}

pub fn build_prompt(req: &AdvisorRequest) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Optimization goal: using the ABC synthesis documentation and the physical results of each \
ABC command sequence below, focus on {} optimization.",
        req.objective.as_str()
    );
    if !req.constraints.trim().is_empty() {
        let _ = writeln!(out, "Constraints: {}", req.constraints.trim());
    }
    if !req.recent_records.is_empty() {
        out.push_str("\nResults so far:\n");
        for r in &req.recent_records {
            let _ = write!(
                out,
                "Iteration {}: {:.2} µm² area, {:.2}ns critical path, {} µW power",
                r.index,
                r.area_um2,
                r.delay_ns,
                format_power(r.power_uw)
            );
            if let (true, Some(d)) = (r.accepted, r.timing_improvement_ns) {
                let _ = write!(out, " [TIMING IMPROVED: {d:.3}ns]");
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "\nCurrent best ABC script:\n{}", req.best_script.serialize());
    if !req.snippets.is_empty() {
        out.push_str("\nRelevant documentation:\n");
        for s in &req.snippets {
            let _ = writeln!(out, "[{}#{}]\n{}\n", s.doc_id, s.chunk_index, s.text.trim());
        }
    }
    out.push_str(
        "\nPropose one improved ABC command sequence. Put it in a single fenced code block \
as one line of commands separated by `;`.\n",
    );
    out
}

fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            let body: Vec<&str> = lines
                .by_ref()
                .take_while(|l| !l.trim_start().starts_with("```"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            return Some(if body.len() > 1 && !body.iter().any(|l| l.contains(';')) {
                body.join(";")
            } else {
                body.join(" ")
            });
        }
    }
    None
}

fn first_command(segment: &str) -> String {
    segment
        .trim()
        .trim_start_matches('+')
        .split(|c: char| c.is_whitespace() || c == ',')
        .next()
        .unwrap_or("")
        .to_string()
}

fn first_script_line(text: &str) -> Option<String> {
    text.lines().map(str::trim).find_map(|line| {
        let parts: Vec<&str> = line.split(';').filter(|p| !p.trim().is_empty()).collect();
        // text before the command may end in a colon, e.g. "Script: strash;..."
        let start = line.rfind(": ").map_or(line, |i| &line[i + 2..]);
        let cmd = first_command(start.split(';').next().unwrap_or(""));
        (parts.len() >= 2 && (cmd == "read_constr" || cmd == "strash")).then(|| start.to_string())
    })
}

/// Pulls a script out of free-form model output.
pub fn extract_script(response: &str) -> Result<AbcScript, AdvisorError> {
    let candidate = first_fenced_block(response)
        .filter(|b| !b.trim().is_empty())
        .or_else(|| first_script_line(response))
        .ok_or_else(|| AdvisorError::Extraction {
            reason: "no fenced block or command line found".into(),
            response: response.to_string(),
        })?;
    let script = parse_script(&candidate).map_err(|e| AdvisorError::Extraction {
        reason: e.to_string(),
        response: response.to_string(),
    })?;
    if script.is_empty() {
        return Err(AdvisorError::Extraction {
            reason: "extracted script is empty".into(),
            response: response.to_string(),
        });
    }
    Ok(script)
}
