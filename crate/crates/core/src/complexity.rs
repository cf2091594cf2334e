//! Scenario complexity: relation (expected scenario severity), quantity
//! (distinct elements) and variety (segmentation accuracy), combined with the
//! urgency `1/TTC` into a single score.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{class, LabelMap};
use crate::scenario::{ScenarioDistribution, ScenarioLabel};

/// Number of non-background classes in the default taxonomy.
pub const DEFAULT_N_MAX: usize = 22;

/// Upper end of the expert rating scale, used only for display clamping.
pub const DISPLAY_CAP: f64 = 10.0;

/// `C = sum_i s(i) p(i)` over the four scenario labels.
pub fn relation_complexity(p: &ScenarioDistribution) -> f64 {
    ScenarioLabel::ALL
        .iter()
        .map(|&l| l.relation_value() * p.prob(l))
        .sum()
}

/// Distinct non-background classes present in the map.
pub fn quantity_count(map: &LabelMap) -> usize {
    map.histogram()
        .iter()
        .enumerate()
        .filter(|&(id, &n)| id != class::BACKGROUND as usize && n > 0)
        .count()
}

/// `1/TTC`, zero for an infinite TTC.
pub fn inverse_ttc(ttc: f64) -> Result<f64> {
    if !(ttc > 0.0) {
        return Err(Error::invalid(format!("ttc must be positive or infinite, got {ttc}")));
    }
    Ok(if ttc.is_infinite() { 0.0 } else { 1.0 / ttc })
}

/// `d = C [(1 - m/100) + n/n_max + 1/TTC]`.
pub fn scenario_complexity(c: f64, m: f64, n: usize, n_max: usize, ttc: f64) -> Result<f64> {
    check_inputs(c, m, n, n_max)?;
    Ok(c * ((1.0 - m / 100.0) + n as f64 / n_max as f64 + inverse_ttc(ttc)?))
}

fn check_inputs(c: f64, m: f64, n: usize, n_max: usize) -> Result<()> {
    if !(1.0..=5.0).contains(&c) {
        return Err(Error::invalid(format!("relation complexity {c} outside [1, 5]")));
    }
    if !(0.0..=100.0).contains(&m) {
        return Err(Error::invalid(format!("segmentation accuracy {m}% outside [0, 100]")));
    }
    if n_max == 0 || n > n_max {
        return Err(Error::invalid(format!("element count {n} must lie in 0..={n_max} with n_max > 0")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Relation complexity.
    #[serde(rename = "C")]
    pub c: f64,
    /// Segmentation accuracy, percent.
    pub m: f64,
    pub n: usize,
    pub n_max: usize,
    /// `None` when no conflict object is approaching.
    pub ttc: Option<f64>,
    pub inv_ttc: f64,
    pub d: f64,
    /// `d` clamped to [`DISPLAY_CAP`].
    pub d_display: f64,
}

impl ComplexityReport {
    pub fn compute(p: &ScenarioDistribution, m: f64, n: usize, n_max: usize, ttc: f64) -> Result<Self> {
        // Rounding in the distribution can push C a hair outside [1, 5].
        let c = relation_complexity(p).clamp(1.0, 5.0);
        let d = scenario_complexity(c, m, n, n_max, ttc)?;
        Ok(ComplexityReport {
            c,
            m,
            n,
            n_max,
            ttc: ttc.is_finite().then_some(ttc),
            inv_ttc: inverse_ttc(ttc)?,
            d,
            d_display: d.min(DISPLAY_CAP),
        })
    }
}

/// Writes `frame_id,C,m,n,n_max,ttc,d` rows; infinite TTC prints as `inf`.
pub fn write_complexity_csv<W: Write>(rows: &[(String, ComplexityReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("complexity csv", e.to_string());
    w.write_record(["frame_id", "C", "m", "n", "n_max", "ttc", "d"]).map_err(err)?;
    for (frame, r) in rows {
        w.write_record([
            frame.clone(),
            r.c.to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.n_max.to_string(),
            r.ttc.map_or_else(|| "inf".to_string(), |t| t.to_string()),
            r.d.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::format("complexity csv", e.to_string()))
}
