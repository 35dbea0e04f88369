//! Greedy spatio-temporal scan statistic.
//!
//! Every lattice cell seeds a window that grows greedily through space-time
//! neighbors inside its limiting window. Significance comes from two one-tailed
//! Monte Carlo tests (High and Low) under the conditional multinomial null, and
//! secondary clusters are accepted in decreasing order of the statistic as long
//! as they share no cell with an accepted cluster.
//!
//! Growth compares statistics after subtracting the single-rate fit, which is
//! constant for a dataset and its null replicates. Reported values add it back.

mod grow;
mod montecarlo;
mod stat;

use serde::{Deserialize, Serialize};

use crate::stdata::{StCell, StDataset};
use crate::stgraph::SpatialGraph;

pub use grow::{grow_window, scan_all};
pub use montecarlo::{
    monte_carlo_null, monte_carlo_with, multinomial_counts, p_value, replicate_counts, replicate_rng,
    NullDistribution,
};
pub use stat::{log_lrt, null_log_likelihood, Direction};

pub(crate) use grow::Totals;


/// Which test directions to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directions {
    pub high: bool,
    pub low: bool,
}

impl Directions {
    pub const BOTH: Self = Self { high: true, low: true };
    pub const HIGH: Self = Self { high: true, low: false };
    pub const LOW: Self = Self { high: false, low: true };

    pub fn allows(self, d: Direction) -> bool {
        match d {
            Direction::High => self.high,
            Direction::Low => self.low,
        }
    }
}

impl Default for Directions {
    fn default() -> Self {
        Self::BOTH
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    /// Maximum number of nearest areas in a limiting window.
    pub k: usize,
    /// Maximum period distance from the center.
    pub t_star: usize,
    pub n_replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub directions: Directions,
}

impl ScanParams {
    pub fn new(k: usize, t_star: usize) -> Self {
        Self {
            k,
            t_star,
            n_replicates: 999,
            alpha: 0.05,
            seed: 0,
            directions: Directions::BOTH,
        }
    }

    pub fn replicates(mut self, n: usize) -> Self {
        self.n_replicates = n;
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn directions(mut self, directions: Directions) -> Self {
        self.directions = directions;
        self
    }
}

/// A connected set of cells with its statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Cells in the order they were added; the first is the seed cell.
    pub cells: Vec<StCell>,
    pub direction: Direction,
    pub obs_in: u64,
    pub exp_in: f64,
    /// Log-LRT of the window; windows whose statistic is undefined get the single-rate baseline.
    pub log_lrt: f64,
}

impl Window {
    pub fn center(&self) -> StCell {
        self.cells[0]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub window: Window,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Significant, pairwise cell-disjoint clusters by decreasing statistic.
    pub clusters: Vec<Cluster>,
    pub null_high: Vec<f64>,
    pub null_low: Vec<f64>,
    /// Most likely High cluster, significant or not.
    pub most_likely_high: Option<Cluster>,
    /// Most likely Low cluster, significant or not.
    pub most_likely_low: Option<Cluster>,
}

impl ClusterSet {
    pub fn empty() -> Self {
        Self {
            clusters: Vec::new(),
            null_high: Vec::new(),
            null_low: Vec::new(),
            most_likely_high: None,
            most_likely_low: None,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn most_likely(&self, d: Direction) -> Option<&Cluster> {
        match d {
            Direction::High => self.most_likely_high.as_ref(),
            Direction::Low => self.most_likely_low.as_ref(),
        }
    }

    /// Direction of the cluster covering each cell, if any.
    pub fn cell_labels(&self, n_cells: usize, n_areas: usize) -> Vec<Option<Direction>> {
        let mut out = vec![None; n_cells];
        for c in &self.clusters {
            for cell in &c.window.cells {
                out[cell.index(n_areas)] = Some(c.window.direction);
            }
        }
        out
    }
}

/// Picks significant, pairwise cell-disjoint clusters from candidate windows.
///
/// Candidates are tested against the null of their own direction and visited by
/// decreasing statistic (ties by the canonical index of the seed cell).
pub fn significant_clusters(
    windows: &[Window],
    nulls: &NullDistribution,
    alpha: f64,
    directions: Directions,
    n_cells: usize,
    n_areas: usize,
) -> ClusterSet {
    let mut order: Vec<usize> = (0..windows.len())
        .filter(|&i| directions.allows(windows[i].direction) && !windows[i].is_empty())
        .collect();
    order.sort_by(|&a, &b| {
        let (wa, wb) = (&windows[a], &windows[b]);
        wb.log_lrt
            .total_cmp(&wa.log_lrt)
            .then(wa.center().index(n_areas).cmp(&wb.center().index(n_areas)))
            .then(a.cmp(&b))
    });

    let cluster = |i: usize| Cluster {
        window: windows[i].clone(),
        p_value: p_value(windows[i].log_lrt, nulls.for_direction(windows[i].direction)),
    };
    let most_likely_high = order
        .iter()
        .find(|&&i| windows[i].direction == Direction::High)
        .map(|&i| cluster(i));
    let most_likely_low = order
        .iter()
        .find(|&&i| windows[i].direction == Direction::Low)
        .map(|&i| cluster(i));

    let mut taken = vec![false; n_cells];
    let mut clusters = Vec::new();
    for &i in &order {
        let w = &windows[i];
        let p = p_value(w.log_lrt, nulls.for_direction(w.direction));
        if p > alpha {
            continue;
        }
        if w.cells.iter().any(|c| taken[c.index(n_areas)]) {
            continue;
        }
        for c in &w.cells {
            taken[c.index(n_areas)] = true;
        }
        clusters.push(Cluster {
            window: w.clone(),
            p_value: p,
        });
    }
    ClusterSet {
        clusters,
        null_high: nulls.high.clone(),
        null_low: nulls.low.clone(),
        most_likely_high,
        most_likely_low,
    }
}

/// Full greedy scan: windows, Monte Carlo nulls and significant clusters.
pub fn detect(data: &StDataset, graph: &SpatialGraph, params: &ScanParams) -> ClusterSet {
    let windows = scan_all(data, graph, params);
    let nulls = monte_carlo_null(data, graph, params);
    significant_clusters(
        &windows,
        &nulls,
        params.alpha,
        params.directions,
        data.n_cells(),
        data.n_areas(),
    )
}
