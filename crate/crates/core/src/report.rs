//! Cluster reports in JSON and flattened CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riskmodel::ClusterTerm;
use crate::scan::{Cluster, ClusterSet, Direction, Window};
use crate::stdata::{format_f64, StCell, StDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub area_id: String,
    pub period: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub direction: Direction,
    pub log_lrt: f64,
    pub p_value: f64,
    pub cells: Vec<CellRef>,
    pub obs_in: u64,
    pub exp_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterEntry>,
}

impl ClusterReport {
    pub fn new(set: &ClusterSet, data: &StDataset) -> Self {
        let clusters = set
            .clusters
            .iter()
            .map(|c| ClusterEntry {
                direction: c.window.direction,
                log_lrt: c.window.log_lrt,
                p_value: c.p_value,
                cells: c
                    .window
                    .cells
                    .iter()
                    .map(|cell| CellRef {
                        area_id: data.area_ids()[cell.area].clone(),
                        period: data.period_labels()[cell.period].clone(),
                    })
                    .collect(),
                obs_in: c.window.obs_in,
                exp_in: c.window.exp_in,
            })
            .collect();
        Self { clusters }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// One row per cell: `cluster,direction,log_lrt,p_value,area_id,period`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cluster", "direction", "log_lrt", "p_value", "area_id", "period"])?;
        for (j, c) in self.clusters.iter().enumerate() {
            for cell in &c.cells {
                w.write_record([
                    &(j + 1).to_string(),
                    c.direction.as_str(),
                    &format_f64(c.log_lrt),
                    &format_f64(c.p_value),
                    &cell.area_id,
                    &cell.period,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Resolves cell references against a dataset.
    pub fn cells(&self, data: &StDataset) -> Result<Vec<(Direction, Vec<StCell>)>> {
        self.clusters
            .iter()
            .map(|c| {
                let cells = c
                    .cells
                    .iter()
                    .map(|r| {
                        let area = data.area_index(&r.area_id).ok_or_else(|| Error::UnknownArea(r.area_id.clone()))?;
                        let period = data
                            .period_labels()
                            .iter()
                            .position(|p| *p == r.period)
                            .ok_or_else(|| Error::DimensionMismatch(format!("unknown period `{}`", r.period)))?;
                        Ok(StCell::new(area, period))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((c.direction, cells))
            })
            .collect()
    }

    /// Rebuilds the cluster set; null distributions are not part of a report.
    pub fn to_set(&self, data: &StDataset) -> Result<ClusterSet> {
        let mut set = ClusterSet::empty();
        for (entry, (direction, cells)) in self.clusters.iter().zip(self.cells(data)?) {
            set.clusters.push(Cluster {
                window: Window {
                    cells,
                    direction,
                    obs_in: entry.obs_in,
                    exp_in: entry.exp_in,
                    log_lrt: entry.log_lrt,
                },
                p_value: entry.p_value,
            });
        }
        Ok(set)
    }

    /// Model cluster terms, one per reported cluster.
    pub fn terms(&self, data: &StDataset) -> Result<Vec<ClusterTerm>> {
        Ok(self
            .cells(data)?
            .into_iter()
            .map(|(d, cells)| ClusterTerm { direction: Some(d), cells })
            .collect())
    }

    /// Direction of the reported cluster covering each cell.
    pub fn cell_labels(&self, data: &StDataset) -> Result<Vec<Option<Direction>>> {
        let mut out = vec![None; data.n_cells()];
        for (d, cells) in self.cells(data)? {
            for c in cells {
                out[c.index(data.n_areas())] = Some(d);
            }
        }
        Ok(out)
    }
}
