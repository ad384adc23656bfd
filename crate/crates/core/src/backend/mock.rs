// SPDX-License-Identifier: Apache-2.0
//! Deterministic analytic stand-in for synthesis plus place-and-route.
//!
//! The model encodes a delay/area trade-off over [`ScriptFeatures`]; it is
//! not physics. Constants are fixed so independent implementations agree
//! bit-for-bit at double precision, which is why powers are computed by
//! repeated multiplication instead of `powi`.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{
    prepare_workdir, subprocess, write_file, BackendConfig, BackendError, Capabilities, Design,
    SimResult, Strategy, SynthOutput, ToolBackend,
};
use crate::abc::{parse_script, AbcScript, ScriptFeatures};
use crate::metrics::{score, BackendMetrics, Objective, ReferencePoint};
use crate::report::{emit_metrics_doc, parse_metrics_doc, SynthStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamDerivation {
    Explicit,
    Hashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockModelParams {
    pub base_area_um2: f64,
    pub base_delay_ns: f64,
    pub derivation: ParamDerivation,
}

impl MockModelParams {
    pub fn explicit(base_area_um2: f64, base_delay_ns: f64) -> Result<Self, BackendError> {
        if !(base_area_um2.is_finite() && base_area_um2 > 0.0)
            || !(base_delay_ns.is_finite() && base_delay_ns > 0.0)
        {
            return Err(BackendError::Domain(
                "mock base area and delay must be positive".into(),
            ));
        }
        Ok(MockModelParams {
            base_area_um2,
            base_delay_ns,
            derivation: ParamDerivation::Explicit,
        })
    }

    /// Derives parameters from a 64-bit FNV-1a digest of the source text:
    /// `A0 = 1000 + (h mod 9001)`, `D0 = 0.50 + ((h >> 16) mod 200) / 100`.
    pub fn hashed(source_text: &str) -> Self {
        let mut hasher = FnvHasher::default();
        hasher.write(source_text.as_bytes());
        let h = hasher.finish();
        MockModelParams {
            base_area_um2: 1000.0 + (h % 9001) as f64,
            base_delay_ns: 0.50 + ((h >> 16) % 200) as f64 / 100.0,
            derivation: ParamDerivation::Hashed,
        }
    }

    pub fn for_design(design: &Design) -> Result<Self, BackendError> {
        match (design.mock_base_area_um2, design.mock_base_delay_ns) {
            (Some(a), Some(d)) => Self::explicit(a, d),
            _ => Ok(Self::hashed(&design.source_text()?)),
        }
    }
}

fn pow(base: f64, n: usize) -> f64 {
    let mut p = 1.0;
    for _ in 0..n {
        p *= base;
    }
    p
}

fn metrics_from_features(
    params: &MockModelParams,
    f: &ScriptFeatures,
    clock_period_ns: f64,
) -> BackendMetrics {
    let d0 = params.base_delay_ns;
    let a0 = params.base_area_um2;
    let dch_delay = if f.has_dch { 0.92 } else { 1.0 };
    let dch_area = if f.has_dch { 1.06 } else { 1.0 };
    let delay = (d0 * (0.70 + 0.30 * f.mean_balance) * pow(0.97, f.n_buffer) * dch_delay)
        .max(0.30 * d0);
    let area = a0
        * (1.30 - 0.25 * f.mean_balance)
        * pow(1.03, f.n_buffer)
        * dch_area
        * pow(0.98, f.n_map.min(3));
    let wns = clock_period_ns - delay;
    BackendMetrics {
        area_um2: area,
        critical_path_ns: delay,
        total_power_uw: area * 1.45e-4,
        wns_ns: wns,
        tns_ns: 10.0 * wns.min(0.0),
        drc_violations: 0,
        runtime_s: 0.0,
    }
}

/// Pure function of (params, strategy, clock period).
pub fn mock_evaluate(
    params: &MockModelParams,
    strategy: &Strategy,
    clock_period_ns: f64,
) -> Result<BackendMetrics, BackendError> {
    let script = strategy.to_script()?;
    let features = script.extract_features()?;
    let m = metrics_from_features(params, &features, clock_period_ns);
    if m.area_um2 <= 0.0 {
        return Err(BackendError::Domain(format!(
            "mean -B {} drives mock area non-positive",
            features.mean_balance
        )));
    }
    Ok(m)
}

/// Finite search space enumerated by [`mock_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    pub balances: Vec<f64>,
    pub buffers: Vec<usize>,
    pub dch: Vec<bool>,
    pub maps: Vec<usize>,
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid {
            balances: (0..=15).map(|i| (70 + 2 * i) as f64 / 100.0).collect(),
            buffers: (0..=4).collect(),
            dch: vec![false, true],
            maps: (1..=3).collect(),
        }
    }
}

impl OracleGrid {
    pub fn len(&self) -> usize {
        self.balances.len() * self.buffers.len() * self.dch.len() * self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Script realizing one grid point: `strash;[dch;]` + n_map maps at `-B b` + n_buffer buffers.
pub fn oracle_script(balance: f64, n_buffer: usize, dch: bool, n_map: usize) -> AbcScript {
    let mut text = String::from("strash");
    if dch {
        text.push_str(";dch");
    }
    for _ in 0..n_map {
        text.push_str(&format!(";map -B {balance:.2}"));
    }
    for _ in 0..n_buffer {
        text.push_str(";buffer -c -N 4");
    }
    parse_script(&text).expect("oracle script grammar")
}

/// Exhaustive argmin of the objective score over `grid`; the first point
/// in enumeration order wins ties.
pub fn mock_oracle(
    params: &MockModelParams,
    objective: Objective,
    reference: &ReferencePoint,
    grid: &OracleGrid,
    clock_period_ns: f64,
) -> Result<(AbcScript, BackendMetrics), BackendError> {
    let mut best: Option<(f64, AbcScript, BackendMetrics)> = None;
    for &b in &grid.balances {
        for &nb in &grid.buffers {
            for &dch in &grid.dch {
                for &nm in &grid.maps {
                    let script = oracle_script(b, nb, dch, nm);
                    let strategy = Strategy::Custom { script };
                    let m = mock_evaluate(params, &strategy, clock_period_ns)?;
                    let s = score(&m, objective, reference)
                        .map_err(|e| BackendError::Domain(e.to_string()))?;
                    if best.as_ref().is_none_or(|(bs, _, _)| s < *bs) {
                        let Strategy::Custom { script } = strategy else { unreachable!() };
                        best = Some((s, script, m));
                    }
                }
            }
        }
    }
    best.map(|(_, s, m)| (s, m))
        .ok_or_else(|| BackendError::Domain("empty oracle grid".into()))
}

const NETLIST_MARKER: &str = "// eda-loop mock strategy: ";

/// Mock synthesis and place-and-route; simulation still runs the real simulator.
pub struct MockBackend {
    config: BackendConfig,
}

impl MockBackend {
    pub fn new(config: BackendConfig) -> Self {
        MockBackend { config }
    }
}

impl ToolBackend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            synthesis: true,
            backend: true,
            simulation: true,
            deterministic: true,
        }
    }

    fn synthesize(
        &self,
        design: &Design,
        strategy: &Strategy,
        workdir: &Path,
    ) -> Result<SynthOutput, BackendError> {
        design.validate()?;
        let script = strategy.to_script()?;
        let params = MockModelParams::for_design(design)?;
        let m = mock_evaluate(&params, strategy, design.clock_period_ns)?;
        prepare_workdir(workdir)?;
        script
            .write_file(&workdir.join("strategy.abc"))
            .map_err(|e| BackendError::Environment(e.to_string()))?;
        let netlist = workdir.join("netlist.v");
        write_file(
            &netlist,
            &format!(
                "{NETLIST_MARKER}{}\n// mock netlist for {} (A0={} D0={})\nmodule {}();\nendmodule\n",
                script.serialize(),
                design.top_module,
                params.base_area_um2,
                params.base_delay_ns,
                design.top_module
            ),
        )?;
        let stats = SynthStats {
            num_cells: (m.area_um2 / 10.0).ceil() as u64,
            cell_area_um2: Some(m.area_um2),
            top_module: design.top_module.clone(),
        };
        Ok(SynthOutput { netlist, stats })
    }

    fn run_backend(
        &self,
        netlist: &Path,
        design: &Design,
        workdir: &Path,
    ) -> Result<BackendMetrics, BackendError> {
        let text = std::fs::read_to_string(netlist).map_err(|e| {
            BackendError::Precondition(format!("netlist {} unreadable: {e}", netlist.display()))
        })?;
        let line = text
            .lines()
            .find_map(|l| l.strip_prefix(NETLIST_MARKER))
            .ok_or_else(|| {
                BackendError::Precondition(format!(
                    "{} was not produced by the mock synthesizer",
                    netlist.display()
                ))
            })?;
        let strategy = Strategy::Custom {
            script: parse_script(line)?,
        };
        let params = MockModelParams::for_design(design)?;
        let m = mock_evaluate(&params, &strategy, design.clock_period_ns)?;
        prepare_workdir(workdir)?;
        let doc = emit_metrics_doc(&m);
        write_file(&workdir.join("metrics.json"), &doc)?;
        Ok(parse_metrics_doc(&doc)?)
    }

    fn simulate(&self, design: &Design, workdir: &Path) -> Result<SimResult, BackendError> {
        subprocess::simulate(&self.config, design, workdir)
    }
}
