// SPDX-License-Identifier: Apache-2.0
//! Post-layout metric model, objective scoring and comparison tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum score improvement required before a candidate replaces the baseline.
pub const ACCEPT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid reference point: delay_ref_ns={delay} area_ref_um2={area} (both must be > 0)")]
    InvalidReference { delay: f64, area: f64 },
    #[error("invalid metrics: {0}")]
    InvalidMetrics(String),
    #[error("geomean domain error: {0}")]
    Domain(String),
    #[error("table shape error: {0}")]
    Shape(String),
}

/// Ground-truth metrics reported by the place-and-route flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackendMetrics {
    pub area_um2: f64,
    pub critical_path_ns: f64,
    pub total_power_uw: f64,
    pub wns_ns: f64,
    pub tns_ns: f64,
    pub drc_violations: u64,
    pub runtime_s: f64,
}

impl BackendMetrics {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let fields = [
            ("area_um2", self.area_um2),
            ("critical_path_ns", self.critical_path_ns),
            ("total_power_uw", self.total_power_uw),
            ("wns_ns", self.wns_ns),
            ("tns_ns", self.tns_ns),
            ("runtime_s", self.runtime_s),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MetricsError::InvalidMetrics(format!("{name} is not finite")));
        }
        if self.area_um2 < 0.0 || self.total_power_uw < 0.0 || self.runtime_s < 0.0 {
            return Err(MetricsError::InvalidMetrics(
                "area, power and runtime must be non-negative".into(),
            ));
        }
        if self.critical_path_ns <= 0.0 {
            return Err(MetricsError::InvalidMetrics(
                "critical_path_ns must be positive".into(),
            ));
        }
        if self.tns_ns > 0.0 {
            return Err(MetricsError::InvalidMetrics("tns_ns must be <= 0".into()));
        }
        if self.wns_ns >= 0.0 && self.tns_ns != 0.0 {
            return Err(MetricsError::InvalidMetrics(
                "tns_ns must be 0 when wns_ns >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Timing,
    Area,
    Balanced,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Timing, Objective::Area, Objective::Balanced];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Timing => "TIMING",
            Objective::Area => "AREA",
            Objective::Balanced => "BALANCED",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "timing" => Ok(Objective::Timing),
            "area" => Ok(Objective::Area),
            "balanced" => Ok(Objective::Balanced),
            other => Err(format!(
                "unknown objective `{other}` (expected timing, area or balanced)"
            )),
        }
    }
}

/// Normalization anchor for BALANCED scoring, fixed once the baseline sweep completes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub delay_ref_ns: f64,
    pub area_ref_um2: f64,
}

impl ReferencePoint {
    pub fn new(delay_ref_ns: f64, area_ref_um2: f64) -> Result<Self, MetricsError> {
        let r = ReferencePoint {
            delay_ref_ns,
            area_ref_um2,
        };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<(), MetricsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.delay_ref_ns) && ok(self.area_ref_um2) {
            Ok(())
        } else {
            Err(MetricsError::InvalidReference {
                delay: self.delay_ref_ns,
                area: self.area_ref_um2,
            })
        }
    }
}

/// Objective score; lower is better.
///
/// BALANCED is the geometric mean of delay and area, each normalized by the
/// reference point, so a design sitting exactly on the reference scores 1.
pub fn score(m: &BackendMetrics, obj: Objective, r: &ReferencePoint) -> Result<f64, MetricsError> {
    r.check()?;
    Ok(match obj {
        Objective::Timing => m.critical_path_ns,
        Objective::Area => m.area_um2,
        Objective::Balanced => {
            ((m.critical_path_ns / r.delay_ref_ns) * (m.area_um2 / r.area_ref_um2)).sqrt()
        }
    })
}

/// Outcome of comparing a candidate against the current baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub accepted: bool,
    /// Change of the objective metric (ns for TIMING, µm² for AREA, score units for BALANCED).
    pub primary_delta: f64,
    /// Change of the off-objective metric (area for TIMING, delay for AREA, power for BALANCED).
    pub secondary_delta: f64,
    pub candidate_score: f64,
    pub baseline_score: f64,
}

pub fn compare(
    candidate: &BackendMetrics,
    baseline: &BackendMetrics,
    obj: Objective,
    r: &ReferencePoint,
) -> Result<Comparison, MetricsError> {
    let cs = score(candidate, obj, r)?;
    let bs = score(baseline, obj, r)?;
    let accepted =
        cs < bs - ACCEPT_EPSILON && candidate.drc_violations <= baseline.drc_violations;
    let (primary_delta, secondary_delta) = match obj {
        Objective::Timing => (
            candidate.critical_path_ns - baseline.critical_path_ns,
            candidate.area_um2 - baseline.area_um2,
        ),
        Objective::Area => (
            candidate.area_um2 - baseline.area_um2,
            candidate.critical_path_ns - baseline.critical_path_ns,
        ),
        Objective::Balanced => (cs - bs, candidate.total_power_uw - baseline.total_power_uw),
    };
    Ok(Comparison {
        accepted,
        primary_delta,
        secondary_delta,
        candidate_score: cs,
        baseline_score: bs,
    })
}

pub fn geomean(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::Domain("empty input".into()));
    }
    if let Some(bad) = xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(MetricsError::Domain(format!("non-positive value {bad}")));
    }
    let mean_ln = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
    Ok(mean_ln.exp())
}

/// One design's delay and area under each compared configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub design: String,
    pub delay_ns: Vec<f64>,
    pub area_um2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    /// Configuration labels; the first one is the normalization base.
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub geomean_delay: Vec<f64>,
    pub geomean_area: Vec<f64>,
    pub ratio_delay: Vec<f64>,
    pub ratio_area: Vec<f64>,
}

pub fn ratio_table(columns: Vec<String>, rows: Vec<TableRow>) -> Result<ComparisonTable, MetricsError> {
    let n = columns.len();
    if n == 0 {
        return Err(MetricsError::Shape("no configuration columns".into()));
    }
    if rows.is_empty() {
        return Err(MetricsError::Shape("no rows".into()));
    }
    for row in &rows {
        if row.delay_ns.len() != n || row.area_um2.len() != n {
            return Err(MetricsError::Shape(format!(
                "row `{}` has {} delay / {} area values, expected {n}",
                row.design,
                row.delay_ns.len(),
                row.area_um2.len()
            )));
        }
    }
    let column_geomean = |pick: &dyn Fn(&TableRow) -> &Vec<f64>, c: usize| {
        let col: Vec<f64> = rows.iter().map(|r| pick(r)[c]).collect();
        geomean(&col)
    };
    let geomean_delay = (0..n)
        .map(|c| column_geomean(&|r| &r.delay_ns, c))
        .collect::<Result<Vec<_>, _>>()?;
    let geomean_area = (0..n)
        .map(|c| column_geomean(&|r| &r.area_um2, c))
        .collect::<Result<Vec<_>, _>>()?;
    let ratio_delay = geomean_delay.iter().map(|g| g / geomean_delay[0]).collect();
    let ratio_area = geomean_area.iter().map(|g| g / geomean_area[0]).collect();
    Ok(ComparisonTable {
        columns,
        rows,
        geomean_delay,
        geomean_area,
        ratio_delay,
        ratio_area,
    })
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["design".to_string()];
        h.extend(self.columns.iter().map(|c| format!("{c}_delay_ns")));
        h.extend(self.columns.iter().map(|c| format!("{c}_area_um2")));
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        let fmt_row = |name: &str, d: &[f64], a: &[f64], ratio: bool| {
            let mut cells = vec![name.to_string()];
            cells.extend(d.iter().map(|v| fmt2(*v, ratio)));
            cells.extend(a.iter().map(|v| fmt2(*v, ratio)));
            cells
        };
        let mut out: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| fmt_row(&r.design, &r.delay_ns, &r.area_um2, false))
            .collect();
        out.push(fmt_row("GeoMean", &self.geomean_delay, &self.geomean_area, false));
        out.push(fmt_row("Ratio", &self.ratio_delay, &self.ratio_area, true));
        out
    }

    /// Comma-separated output with a header row. Values use display rounding.
    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for row in self.body() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut all = vec![self.header()];
        all.extend(self.body());
        let widths: Vec<usize> = (0..all[0].len())
            .map(|c| all.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (i, row) in all.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
            if i == 0 || i == all.len() - 3 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                s.push_str(&"-".repeat(total));
                s.push('\n');
            }
        }
        s
    }
}

/// Reads a per-design table in the layout written by [`ComparisonTable::to_csv`]
/// (`design,<c>_delay_ns...,<c>_area_um2...`). Summary rows named `GeoMean`
/// or `Ratio` are skipped so a rendered table can be read back.
pub fn read_table_csv(text: &str) -> Result<(Vec<String>, Vec<TableRow>), MetricsError> {
    let shape = |m: String| MetricsError::Shape(m);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| shape(e.to_string()))?.clone();
    let cells: Vec<&str> = header.iter().collect();
    if cells.len() < 3 || cells.len().is_multiple_of(2) || cells[0] != "design" {
        return Err(shape(
            "header must be `design` followed by equal numbers of delay and area columns".into(),
        ));
    }
    let n = (cells.len() - 1) / 2;
    let mut columns = Vec::with_capacity(n);
    for i in 0..n {
        let d = cells[1 + i].strip_suffix("_delay_ns");
        let a = cells[1 + n + i].strip_suffix("_area_um2");
        match (d, a) {
            (Some(d), Some(a)) if d == a => columns.push(d.to_string()),
            _ => {
                return Err(shape(format!(
                    "columns `{}` and `{}` do not name the same configuration",
                    cells[1 + i],
                    cells[1 + n + i]
                )))
            }
        }
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| shape(e.to_string()))?;
        let design = record.get(0).unwrap_or("").to_string();
        if design == "GeoMean" || design == "Ratio" {
            continue;
        }
        let values = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    shape(format!("row {} (`{design}`): `{v}` is not a number", line + 2))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(TableRow {
            design,
            delay_ns: values[..n].to_vec(),
            area_um2: values[n..].to_vec(),
        });
    }
    Ok((columns, rows))
}

/// Two-decimal display rounding. Exact unit ratios print as `1`.
fn fmt2(v: f64, ratio: bool) -> String {
    if ratio && (v - 1.0).abs() < 5e-13 {
        "1".to_string()
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(delay: f64, area: f64) -> BackendMetrics {
        BackendMetrics {
            area_um2: area,
            critical_path_ns: delay,
            total_power_uw: area * 1.45e-4,
            wns_ns: 10.0 - delay,
            tns_ns: 0.0,
            drc_violations: 0,
            runtime_s: 0.0,
        }
    }

    fn unit_ref() -> ReferencePoint {
        ReferencePoint::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn timing_score_is_critical_path() {
        assert_eq!(score(&m(0.86, 3913.75), Objective::Timing, &unit_ref()).unwrap(), 0.86);
        assert_eq!(score(&m(0.86, 3913.75), Objective::Area, &unit_ref()).unwrap(), 3913.75);
    }

    #[test]
    fn balanced_score_at_reference_is_one() {
        let r = ReferencePoint::new(2.0, 5000.0).unwrap();
        assert_eq!(score(&m(2.0, 5000.0), Objective::Balanced, &r).unwrap(), 1.0);
    }

    #[test]
    fn balanced_score_direct_formula() {
        let r = ReferencePoint::new(2.0, 5000.0).unwrap();
        let s = score(&m(1.88, 5390.0), Objective::Balanced, &r).unwrap();
        let expected = (0.94f64 * 1.078).sqrt();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 1.0066).abs() < 1e-4);
    }

    #[test]
    fn nonpositive_reference_rejected() {
        assert!(ReferencePoint::new(0.0, 1.0).is_err());
        let bad = ReferencePoint {
            delay_ref_ns: 1.0,
            area_ref_um2: -3.0,
        };
        assert!(matches!(
            score(&m(1.0, 1.0), Objective::Balanced, &bad),
            Err(MetricsError::InvalidReference { .. })
        ));
    }

    #[test]
    fn compare_accepts_timing_step() {
        let c = compare(&m(0.86, 3913.75), &m(0.88, 3971.31), Objective::Timing, &unit_ref()).unwrap();
        assert!(c.accepted);
        assert!((c.primary_delta + 0.02).abs() < 1e-12);
        assert!((c.secondary_delta + 57.56).abs() < 1e-9);
    }

    #[test]
    fn compare_rejects_identical() {
        let a = m(1.0, 100.0);
        for obj in Objective::ALL {
            assert!(!compare(&a, &a, obj, &unit_ref()).unwrap().accepted);
        }
    }

    #[test]
    fn compare_rejects_more_drc_violations() {
        let base = m(1.0, 100.0);
        let mut cand = m(0.5, 50.0);
        cand.drc_violations = 1;
        assert!(!compare(&cand, &base, Objective::Timing, &unit_ref()).unwrap().accepted);
    }

    #[test]
    fn compare_chain_matches_enumeration() {
        let r = ReferencePoint::new(1.5, 4000.0).unwrap();
        let cands = [m(1.6, 4100.0), m(1.4, 4500.0), m(1.5, 4050.0)];
        let mut best = cands[0];
        for c in &cands[1..] {
            if compare(c, &best, Objective::Balanced, &r).unwrap().accepted {
                best = *c;
            }
        }
        // Brute force: products 6560, 6300, 6075 -> third wins.
        let products: Vec<f64> = cands.iter().map(|c| c.critical_path_ns * c.area_um2).collect();
        let argmin = (0..3)
            .min_by(|a, b| products[*a].partial_cmp(&products[*b]).unwrap())
            .unwrap();
        assert_eq!(argmin, 2);
        assert_eq!(best, cands[argmin]);
    }

    #[test]
    fn geomean_basics() {
        assert_eq!(geomean(&[3.5]).unwrap(), 3.5);
        assert!((geomean(&[2.0, 8.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!(geomean(&[]).is_err());
        assert!(geomean(&[1.0, 0.0]).is_err());
        assert!(geomean(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn ratio_table_identical_columns() {
        let rows = vec![
            TableRow { design: "a".into(), delay_ns: vec![1.0, 1.0], area_um2: vec![10.0, 10.0] },
            TableRow { design: "b".into(), delay_ns: vec![2.0, 2.0], area_um2: vec![30.0, 30.0] },
        ];
        let t = ratio_table(vec!["x".into(), "y".into()], rows).unwrap();
        assert!(t.ratio_delay.iter().all(|r| (*r - 1.0).abs() < 1e-12));
        assert!(t.ratio_area.iter().all(|r| (*r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ratio_table_shape_mismatch() {
        let rows = vec![TableRow { design: "a".into(), delay_ns: vec![1.0], area_um2: vec![1.0, 2.0] }];
        assert!(matches!(
            ratio_table(vec!["x".into(), "y".into()], rows),
            Err(MetricsError::Shape(_))
        ));
    }

    #[test]
    fn metrics_invariants() {
        let mut x = m(1.0, 1.0);
        assert!(x.validate().is_ok());
        x.tns_ns = 0.5;
        assert!(x.validate().is_err());
        x.tns_ns = -0.5;
        // wns >= 0 requires tns == 0
        assert!(x.validate().is_err());
        x.wns_ns = -0.1;
        assert!(x.validate().is_ok());
        x.area_um2 = f64::NAN;
        assert!(x.validate().is_err());
    }

    #[test]
    fn objective_parse() {
        assert_eq!("Timing".parse::<Objective>().unwrap(), Objective::Timing);
        assert!("power".parse::<Objective>().is_err());
        assert_eq!(serde_json::to_string(&Objective::Balanced).unwrap(), "\"BALANCED\"");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            TableRow { design: "a".into(), delay_ns: vec![1.25, 1.0], area_um2: vec![10.5, 9.0] },
            TableRow { design: "b".into(), delay_ns: vec![2.0, 2.5], area_um2: vec![30.0, 31.0] },
        ];
        let t = ratio_table(vec!["x".into(), "y".into()], rows.clone()).unwrap();
        let (cols, back) = read_table_csv(&t.to_csv()).unwrap();
        assert_eq!(cols, vec!["x", "y"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_errors() {
        assert!(read_table_csv("name,x_delay_ns,x_area_um2\n").is_err());
        assert!(read_table_csv("design,x_delay_ns,y_area_um2\n").is_err());
        assert!(read_table_csv("design,x_delay_ns,x_area_um2\na,1,zz\n").is_err());
        assert!(read_table_csv("design,x_delay_ns,x_area_um2\na,1\n").is_err());
    }
}
