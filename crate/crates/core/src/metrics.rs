//! Detection and risk-estimation metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scan::{ClusterSet, Direction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Absent when the truth has no cluster cells.
    pub recall: Option<f64>,
    /// Absent when the truth has no cluster cells or nothing was flagged.
    pub precision: Option<f64>,
    pub n_detected: usize,
    pub n_spurious: usize,
}

/// Cell-level recall and precision with direction agreement, plus cluster counts.
///
/// `truth` holds the direction of the true cluster covering each cell.
pub fn detection_metrics(detected: &ClusterSet, truth: &[Option<Direction>], n_areas: usize) -> DetectionReport {
    let n_true = truth.iter().filter(|t| t.is_some()).count();
    let mut flagged = vec![None; truth.len()];
    let mut n_spurious = 0;
    for c in &detected.clusters {
        let mut hits = 0;
        for cell in &c.window.cells {
            let k = cell.index(n_areas);
            flagged[k] = Some(c.window.direction);
            if truth[k] == Some(c.window.direction) {
                hits += 1;
            }
        }
        if hits == 0 {
            n_spurious += 1;
        }
    }
    let n_flagged = flagged.iter().filter(|f| f.is_some()).count();
    let correct = flagged
        .iter()
        .zip(truth)
        .filter(|(f, t)| f.is_some() && f == t)
        .count();
    let (recall, precision) = if n_true == 0 {
        (None, None)
    } else {
        (
            Some(correct as f64 / n_true as f64),
            (n_flagged > 0).then(|| correct as f64 / n_flagged as f64),
        )
    };
    DetectionReport {
        recall,
        precision,
        n_detected: detected.clusters.len(),
        n_spurious,
    }
}

/// Averages over simulations; recall and precision over the runs where they are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n_runs: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub n_detected: f64,
    pub n_spurious: f64,
}

impl DetectionSummary {
    pub fn from_reports(reports: &[DetectionReport]) -> Self {
        let mean_opt = |f: &dyn Fn(&DetectionReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let m = reports.len().max(1) as f64;
        Self {
            n_runs: reports.len(),
            recall: mean_opt(&|r| r.recall),
            precision: mean_opt(&|r| r.precision),
            n_detected: reports.iter().map(|r| r.n_detected as f64).sum::<f64>() / m,
            n_spurious: reports.iter().map(|r| r.n_spurious as f64).sum::<f64>() / m,
        }
    }
}

/// Posterior summary of one cell's log-risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellFilter {
    All,
    InHigh,
    InLow,
    Outside,
}

impl CellFilter {
    pub const ALL: [CellFilter; 4] = [Self::All, Self::InHigh, Self::InLow, Self::Outside];

    pub fn keeps(self, label: Option<Direction>) -> bool {
        match self {
            Self::All => true,
            Self::InHigh => label == Some(Direction::High),
            Self::InLow => label == Some(Direction::Low),
            Self::Outside => label.is_none(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::InHigh => "in_high",
            Self::InLow => "in_low",
            Self::Outside => "outside",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub n_cells: usize,
    pub mab: f64,
    pub mrmse: f64,
    pub mean_length: f64,
    pub coverage95: f64,
    pub is05: f64,
}

/// Interval score at level 0.05: length plus 40 times the distance the truth lies outside.
pub fn interval_score(lo: f64, hi: f64, truth: f64) -> f64 {
    let mut s = hi - lo;
    if truth < lo {
        s += 40.0 * (lo - truth);
    }
    if truth > hi {
        s += 40.0 * (truth - hi);
    }
    s
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Bias, spread, interval length, coverage and interval score over simulations.
///
/// `estimates[l][k]` and `truths[l][k]` are simulation `l`, cell `k`. Per-cell
/// quantities are averaged over the cells kept by `filter`; `None` if none are kept.
pub fn estimation_metrics(
    estimates: &[Vec<CellEstimate>],
    truths: &[Vec<f64>],
    labels: &[Option<Direction>],
    filter: CellFilter,
) -> Option<EstimationReport> {
    let l = estimates.len();
    if l == 0 || truths.len() != l {
        return None;
    }
    let cells: Vec<usize> = (0..labels.len()).filter(|&k| filter.keeps(labels[k])).collect();
    if cells.is_empty() {
        return None;
    }
    let (mut mab, mut mrmse, mut len, mut cover, mut is) = (0.0, 0.0, 0.0, 0usize, 0.0);
    let mut scores = Vec::with_capacity(l);
    for &k in &cells {
        let (mut bias, mut sq) = (0.0, 0.0);
        scores.clear();
        for s in 0..l {
            let e = estimates[s][k];
            let t = truths[s][k];
            let err = e.median - t;
            bias += err;
            sq += err * err;
            len += e.hi - e.lo;
            if e.lo <= t && t <= e.hi {
                cover += 1;
            }
            scores.push(interval_score(e.lo, e.hi, t));
        }
        mab += (bias / l as f64).abs();
        mrmse += (sq / l as f64).sqrt();
        is += median(&mut scores);
    }
    let m = cells.len() as f64;
    Some(EstimationReport {
        n_cells: cells.len(),
        mab: mab / m,
        mrmse: mrmse / m,
        mean_length: len / (m * l as f64),
        coverage95: cover as f64 / (m * l as f64),
        is05: is / m,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Detection table: `scenario,method,n_sims,recall,precision,n_detected,n_spurious`.
pub fn write_detection_table(path: impl AsRef<Path>, rows: &[(String, String, DetectionSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "method", "n_sims", "recall", "precision", "n_detected", "n_spurious"])?;
    for (scenario, method, s) in rows {
        w.write_record([
            scenario.as_str(),
            method.as_str(),
            &s.n_runs.to_string(),
            &opt(s.recall),
            &opt(s.precision),
            &format!("{:.2}", s.n_detected),
            &format!("{:.2}", s.n_spurious),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Estimation table: `scenario,method,cells,n_cells,mab,mrmse,mean_length,coverage95,is05`.
pub fn write_estimation_table(
    path: impl AsRef<Path>,
    rows: &[(String, String, CellFilter, EstimationReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "method", "cells", "n_cells", "mab", "mrmse", "mean_length", "coverage95", "is05"])?;
    for (scenario, method, f, r) in rows {
        w.write_record([
            scenario.as_str(),
            method.as_str(),
            f.as_str(),
            &r.n_cells.to_string(),
            &format!("{:.4}", r.mab),
            &format!("{:.4}", r.mrmse),
            &format!("{:.4}", r.mean_length),
            &format!("{:.4}", r.coverage95),
            &format!("{:.4}", r.is05),
        ])?;
    }
    w.flush()?;
    Ok(())
}
