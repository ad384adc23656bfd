// SPDX-License-Identifier: Apache-2.0
//! Deterministic rule table.
//!
//! TIMING, in order:
//! - T1: mean `-B` > 0.70 → subtract 0.02 from every map `-B` (floor 0.70)
//! - T2: fewer than 4 buffers → append `buffer -c -N 4`
//! - T3: no `dch` → insert `dch` after the first `strash`
//! - T4: set every map `-B` to 0.70 + 0.02·(iteration mod 4)
//!
//! AREA, in order:
//! - A1: buffers present → drop the last one
//! - A2: `dch` present → drop it
//! - A3: mean `-B` < 1.00 → add 0.05 to every map `-B` (cap 1.00)
//! - A4: fewer than 3 maps → append `map -B 1.0`
//! - A5: cycle the number of maps through 1, 2, 3
//!
//! BALANCED uses the TIMING table on even iterations and AREA on odd ones.
//! A rule whose guard holds but whose output equals the current best is
//! treated as not applicable, so a proposal never repeats the best script.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AdvisorProposal, AdvisorRequest, Provenance};
use crate::abc::{AbcCommand, AbcScript, ScriptFeatures};
use crate::metrics::Objective;

const B_MIN: f64 = 0.70;
const B_MAX: f64 = 1.00;
const TIMING_STEP: f64 = 0.02;
const AREA_STEP: f64 = 0.05;
const MAX_BUFFERS: usize = 4;
const MAX_MAPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    T1,
    T2,
    T3,
    T4,
    A1,
    A2,
    A3,
    A4,
    A5,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Formats a `-B` value: two decimals when exact, otherwise up to four.
fn format_balance(x: f64) -> String {
    let r = (x * 10_000.0).round() / 10_000.0;
    if ((r * 100.0) - (r * 100.0).round()).abs() < 1e-6 {
        format!("{r:.2}")
    } else {
        format!("{r}")
    }
}

fn features(script: &AbcScript) -> ScriptFeatures {
    // scripts whose -B cannot be read still get structural rules
    script.extract_features().unwrap_or(ScriptFeatures {
        mean_balance: 1.0,
        n_buffer: script.commands.iter().filter(|c| c.name == "buffer").count(),
        has_dch: script.commands.iter().any(|c| c.name == "dch"),
        n_map: script.commands.iter().filter(|c| c.name == "map").count(),
    })
}

fn map_balance(script: &AbcScript, f: impl Fn(f64) -> f64) -> AbcScript {
    let mut out = script.clone();
    for cmd in out.commands.iter_mut().filter(|c| c.name == "map") {
        if let Some(pos) = cmd.args.iter().position(|a| a == "-B") {
            if let Some(v) = cmd.args.get(pos + 1).and_then(|v| v.parse::<f64>().ok()) {
                cmd.args[pos + 1] = format_balance(f(v));
            }
        }
    }
    out
}

fn set_balance(script: &AbcScript, b: f64) -> AbcScript {
    let mut out = script.clone();
    let mut any_map = false;
    for cmd in out.commands.iter_mut().filter(|c| c.name == "map") {
        any_map = true;
        match cmd.args.iter().position(|a| a == "-B") {
            Some(pos) if pos + 1 < cmd.args.len() => cmd.args[pos + 1] = format_balance(b),
            Some(_) => cmd.args.push(format_balance(b)),
            None => {
                cmd.args.push("-B".into());
                cmd.args.push(format_balance(b));
            }
        }
    }
    if !any_map {
        out.commands.push(AbcCommand::new("map", &["-B", &format_balance(b)]));
    }
    out
}

fn with_map_count(script: &AbcScript, target: usize) -> AbcScript {
    let mut out = script.clone();
    let mut count = out.commands.iter().filter(|c| c.name == "map").count();
    while count > target {
        let last = out.commands.iter().rposition(|c| c.name == "map").expect("map present");
        out.commands.remove(last);
        count -= 1;
    }
    while count < target {
        out.commands.push(AbcCommand::new("map", &["-B", "1.0"]));
        count += 1;
    }
    out
}

fn timing_moves(script: &AbcScript, iteration: usize) -> Vec<(Rule, AbcScript)> {
    let f = features(script);
    let mut out = Vec::new();
    if f.mean_balance > B_MIN + 1e-9 {
        out.push((Rule::T1, map_balance(script, |b| (b - TIMING_STEP).max(B_MIN))));
    }
    if f.n_buffer < MAX_BUFFERS {
        let mut s = script.clone();
        s.commands.push(AbcCommand::new("buffer", &["-c", "-N", "4"]));
        out.push((Rule::T2, s));
    }
    if !f.has_dch {
        let mut s = script.clone();
        let at = s.commands.iter().position(|c| c.name == "strash").map_or(0, |i| i + 1);
        s.commands.insert(at, AbcCommand::new("dch", &[]));
        out.push((Rule::T3, s));
    }
    for j in 0..4 {
        let b = B_MIN + ((iteration + j) % 4) as f64 * TIMING_STEP;
        out.push((Rule::T4, set_balance(script, b)));
    }
    out
}

fn area_moves(script: &AbcScript, iteration: usize) -> Vec<(Rule, AbcScript)> {
    let f = features(script);
    let mut out = Vec::new();
    if f.n_buffer > 0 {
        let mut s = script.clone();
        let last = s.commands.iter().rposition(|c| c.name == "buffer").expect("buffer present");
        s.commands.remove(last);
        out.push((Rule::A1, s));
    }
    if f.has_dch {
        let mut s = script.clone();
        s.commands.retain(|c| c.name != "dch");
        out.push((Rule::A2, s));
    }
    if f.mean_balance < B_MAX - 1e-9 {
        out.push((Rule::A3, map_balance(script, |b| (b + AREA_STEP).min(B_MAX))));
    }
    if f.n_map < MAX_MAPS {
        let mut s = script.clone();
        s.commands.push(AbcCommand::new("map", &["-B", "1.0"]));
        out.push((Rule::A4, s));
    }
    for j in 0..MAX_MAPS {
        let target = (iteration + j) % MAX_MAPS + 1;
        if target != f.n_map {
            out.push((Rule::A5, with_map_count(script, target)));
        }
    }
    out
}

/// Every applicable move in priority order: the objective's own table first
/// (for BALANCED, the table picked by iteration parity), then the other
/// table. Moves that reproduce the best script or an earlier move are dropped.
pub fn heuristic_candidates(req: &AdvisorRequest) -> Vec<(Rule, AbcScript)> {
    let timing_first = match req.objective {
        Objective::Timing => true,
        Objective::Area => false,
        Objective::Balanced => req.iteration.is_multiple_of(2),
    };
    let (first, second) = if timing_first {
        (timing_moves(&req.best_script, req.iteration), area_moves(&req.best_script, req.iteration))
    } else {
        (area_moves(&req.best_script, req.iteration), timing_moves(&req.best_script, req.iteration))
    };
    let mut seen = HashSet::from([req.best_script.canonical_hash()]);
    first
        .into_iter()
        .chain(second)
        .filter(|(_, s)| seen.insert(s.canonical_hash()))
        .collect()
}

pub fn heuristic_propose(req: &AdvisorRequest) -> AdvisorProposal {
    let (rule, script) = heuristic_candidates(req)
        .into_iter()
        .next()
        .expect("rotation moves always differ from the best script");
    AdvisorProposal {
        script,
        provenance: Provenance::Heuristic { rule },
        raw_response: None,
    }
}

/// First move whose canonical hash is not in `tried`.
pub fn heuristic_propose_excluding(
    req: &AdvisorRequest,
    tried: &HashSet<u64>,
) -> Option<AdvisorProposal> {
    heuristic_candidates(req)
        .into_iter()
        .find(|(_, s)| !tried.contains(&s.canonical_hash()))
        .map(|(rule, script)| AdvisorProposal {
            script,
            provenance: Provenance::Heuristic { rule },
            raw_response: None,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::parse_script;

    fn req(obj: Objective, best: &str, iteration: usize) -> AdvisorRequest {
        AdvisorRequest {
            objective: obj,
            best_script: parse_script(best).unwrap(),
            recent_records: vec![],
            snippets: vec![],
            constraints: String::new(),
            iteration,
        }
    }

    fn propose(obj: Objective, best: &str, iteration: usize) -> (Rule, String) {
        let p = heuristic_propose(&req(obj, best, iteration));
        let Provenance::Heuristic { rule } = p.provenance else { panic!() };
        (rule, p.script.serialize())
    }

    #[test]
    fn t1_steps_balance_down() {
        assert_eq!(propose(Objective::Timing, "strash;map -B 0.87", 0), (Rule::T1, "strash;map -B 0.85".into()));
        assert_eq!(propose(Objective::Timing, "strash;map -B 0.71", 0), (Rule::T1, "strash;map -B 0.70".into()));
    }

    #[test]
    fn timing_rule_order() {
        assert_eq!(propose(Objective::Timing, "strash;map -B 0.70", 0).0, Rule::T2);
        let four = "strash;map -B 0.70;buffer -c -N 4;buffer -c -N 4;buffer -c -N 4;buffer -c -N 4";
        let (rule, s) = propose(Objective::Timing, four, 0);
        assert_eq!(rule, Rule::T3);
        assert!(s.starts_with("strash;dch;map"));
        let full = four.replace("strash;", "strash;dch;");
        // T4 with iteration 0 would reproduce -B 0.70, so the next rotation value is used
        let (rule, s) = propose(Objective::Timing, &full, 0);
        assert_eq!(rule, Rule::T4);
        assert!(s.contains("map -B 0.72"));
        let (_, s) = propose(Objective::Timing, &full, 2);
        assert!(s.contains("map -B 0.74"));
    }

    #[test]
    fn area_rules() {
        assert_eq!(
            propose(Objective::Area, "strash;dch;map -B 1.0;buffer -c -N 4", 0),
            (Rule::A1, "strash;dch;map -B 1.0".into())
        );
        assert_eq!(propose(Objective::Area, "strash;dch;map -B 1.0", 0), (Rule::A2, "strash;map -B 1.0".into()));
        assert_eq!(propose(Objective::Area, "strash;map -B 0.80", 0), (Rule::A3, "strash;map -B 0.85".into()));
        assert_eq!(propose(Objective::Area, "strash;map -B 0.97", 0), (Rule::A3, "strash;map -B 1.00".into()));
        assert_eq!(
            propose(Objective::Area, "strash;map -B 1.0", 0),
            (Rule::A4, "strash;map -B 1.0;map -B 1.0".into())
        );
        let (rule, s) = propose(Objective::Area, "strash;map -B 1.0;map -B 1.0;map -B 1.0", 0);
        assert_eq!(rule, Rule::A5);
        assert_eq!(s, "strash;map -B 1.0");
    }

    #[test]
    fn balanced_alternates_by_parity() {
        let best = "strash;dch;map -B 0.80;buffer -c -N 4";
        assert_eq!(propose(Objective::Balanced, best, 0).0, Rule::T1);
        assert_eq!(propose(Objective::Balanced, best, 1).0, Rule::A1);
        assert_eq!(propose(Objective::Balanced, best, 2).0, Rule::T1);
    }

    #[test]
    fn deterministic_and_never_repeats_best() {
        for obj in Objective::ALL {
            for best in ["", "strash", "strash;map -B 0.70", "map -B 1.0;map -B 1.0;map -B 1.0", "strash;dch;map -B 0.7;buffer;buffer;buffer;buffer"] {
                for it in 0..6 {
                    let r = req(obj, best, it);
                    let a = heuristic_propose(&r);
                    assert_eq!(a, heuristic_propose(&r));
                    assert_ne!(a.script.canonical_hash(), r.best_script.canonical_hash());
                    assert_eq!(parse_script(&a.script.serialize()).unwrap(), a.script);
                }
            }
        }
    }

    #[test]
    fn excluding_skips_tried() {
        let r = req(Objective::Timing, "strash;map -B 0.87", 0);
        let first = heuristic_propose(&r);
        let tried = HashSet::from([first.script.canonical_hash()]);
        let next = heuristic_propose_excluding(&r, &tried).unwrap();
        assert_eq!(next.provenance, Provenance::Heuristic { rule: Rule::T2 });
        let all: HashSet<u64> = heuristic_candidates(&r).iter().map(|(_, s)| s.canonical_hash()).collect();
        assert!(heuristic_propose_excluding(&r, &all).is_none());
    }

    #[test]
    fn balance_formatting() {
        assert_eq!(format_balance(0.85), "0.85");
        assert_eq!(format_balance(1.0), "1.00");
        assert_eq!(format_balance(0.855), "0.855");
    }
}
