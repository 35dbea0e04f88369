//! Cylindrical space-time scan: circular spatial bases times period intervals.
//!
//! Spatial bases are prefixes of each area's centroid-distance ranking whose
//! expected mass stays within a fraction of the total. The statistic, Monte Carlo
//! null and secondary-cluster rule are shared with the greedy scan.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::scan::{monte_carlo_with, significant_clusters, ClusterSet, Direction, Directions, NullDistribution, Totals, Window};
use crate::stdata::{StCell, StDataset};
use crate::stgraph::SpatialGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderParams {
    /// Largest share of the total expected count a spatial base may hold.
    pub max_spatial_fraction: f64,
    /// Largest share of the study period an interval may span.
    pub max_temporal_fraction: f64,
    pub n_replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub directions: Directions,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            max_spatial_fraction: 0.5,
            max_temporal_fraction: 0.9,
            n_replicates: 999,
            alpha: 0.05,
            seed: 0,
            directions: Directions::BOTH,
        }
    }
}

impl CylinderParams {
    pub fn replicates(mut self, n: usize) -> Self {
        self.n_replicates = n;
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

    /// Longest interval in periods, at least 1.
    pub fn max_length(&self, n_periods: usize) -> usize {
        ((self.max_temporal_fraction * n_periods as f64 + 1e-9).floor() as usize).clamp(1, n_periods)
    }
}

/// A spatial base (centroid-distance prefix of `center`) over periods `t1..=t2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: usize,
    /// Areas in increasing distance from the center.
    pub areas: Vec<usize>,
    pub t1: usize,
    pub t2: usize,
}

impl Cylinder {
    pub fn cells(&self) -> Vec<StCell> {
        (self.t1..=self.t2)
            .flat_map(|t| self.areas.iter().map(move |&a| StCell::new(a, t)))
            .collect()
    }

    fn key(&self) -> (Vec<usize>, usize, usize) {
        let mut a = self.areas.clone();
        a.sort_unstable();
        (a, self.t1, self.t2)
    }
}

fn area_expected(data: &StDataset) -> Vec<f64> {
    let n = data.n_areas();
    let mut out = vec![0.0; n];
    for (k, e) in data.expected().iter().enumerate() {
        out[k % n] += e;
    }
    out
}

/// Number of ranking entries forming admissible bases for each center.
fn base_limits(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams) -> Vec<usize> {
    let per_area = area_expected(data);
    let cap = params.max_spatial_fraction * data.total_expected() * (1.0 + 1e-12);
    (0..graph.n_areas())
        .map(|c| {
            let mut mass = 0.0;
            let mut len = 0;
            for (j, &a) in graph.knn_rank(c).iter().enumerate() {
                mass += per_area[a];
                if j > 0 && mass > cap {
                    break;
                }
                len = j + 1;
            }
            len
        })
        .collect()
}

/// All distinct cylinders, in order of center, base size and interval.
pub fn enumerate_cylinders(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams) -> Vec<Cylinder> {
    let t = data.n_periods();
    let max_len = params.max_length(t);
    let limits = base_limits(data, graph, params);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (c, &limit) in limits.iter().enumerate() {
        for j in 1..=limit {
            for t1 in 0..t {
                for t2 in t1..(t1 + max_len).min(t) {
                    let cyl = Cylinder {
                        center: c,
                        areas: graph.knn_rank(c)[..j].to_vec(),
                        t1,
                        t2,
                    };
                    if seen.insert(cyl.key()) {
                        out.push(cyl);
                    }
                }
            }
        }
    }
    out
}

struct Hit {
    center: usize,
    len: usize,
    t1: usize,
    t2: usize,
    direction: Direction,
    value: f64,
}

/// Calls `f` for every cylinder of `center` whose statistic is defined, with its shifted value.
#[allow(clippy::too_many_arguments)]
fn visit_center<F: FnMut(usize, usize, usize, Direction, f64)>(
    observed: &[u64],
    expected: &[f64],
    totals: &Totals,
    graph: &SpatialGraph,
    n_periods: usize,
    center: usize,
    limit: usize,
    max_len: usize,
    mut f: F,
) {
    let n = graph.n_areas();
    let mut base_obs = vec![0u64; n_periods];
    let mut base_exp = vec![0.0; n_periods];
    let mut cum_obs = vec![0u64; n_periods + 1];
    let mut cum_exp = vec![0.0; n_periods + 1];
    for (j, &a) in graph.knn_rank(center)[..limit].iter().enumerate() {
        for t in 0..n_periods {
            base_obs[t] += observed[t * n + a];
            base_exp[t] += expected[t * n + a];
            cum_obs[t + 1] = cum_obs[t] + base_obs[t];
            cum_exp[t + 1] = cum_exp[t] + base_exp[t];
        }
        for t1 in 0..n_periods {
            for t2 in t1..(t1 + max_len).min(n_periods) {
                let o = (cum_obs[t2 + 1] - cum_obs[t1]) as f64;
                let e = cum_exp[t2 + 1] - cum_exp[t1];
                for d in [Direction::High, Direction::Low] {
                    if let Some(v) = totals.statistic(o, e, d) {
                        f(j + 1, t1, t2, d, v);
                    }
                }
            }
        }
    }
}

fn maxima(
    observed: &[u64],
    data: &StDataset,
    graph: &SpatialGraph,
    limits: &[usize],
    max_len: usize,
) -> (f64, f64) {
    let totals = Totals::new(observed, data.expected());
    let (mut high, mut low) = (0.0_f64, 0.0_f64);
    if totals.obs > 0.0 {
        for (c, &limit) in limits.iter().enumerate() {
            visit_center(observed, data.expected(), &totals, graph, data.n_periods(), c, limit, max_len, |_, _, _, d, v| match d {
                Direction::High => high = high.max(v),
                Direction::Low => low = low.max(v),
            });
        }
    }
    (high + totals.null_ll, low + totals.null_ll)
}

/// Every cylinder with a defined statistic, deduplicated, as scan windows.
pub fn cylinder_windows(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams) -> Vec<Window> {
    let hits = all_hits(data, graph, params, |_| true);
    materialize(data, graph, hits)
}

fn all_hits<P: Fn(&Hit) -> bool + Sync>(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams, keep: P) -> Vec<(Hit, f64)> {
    let totals = Totals::new(data.observed(), data.expected());
    let limits = base_limits(data, graph, params);
    let max_len = params.max_length(data.n_periods());
    let per_center = par::map_indexed(graph.n_areas(), |c| {
        let mut out = Vec::new();
        visit_center(data.observed(), data.expected(), &totals, graph, data.n_periods(), c, limits[c], max_len, |len, t1, t2, d, v| {
            let hit = Hit {
                center: c,
                len,
                t1,
                t2,
                direction: d,
                value: v,
            };
            if params.directions.allows(d) && keep(&hit) {
                out.push((hit, v + totals.null_ll));
            }
        });
        out
    });
    per_center.into_iter().flatten().collect()
}

fn materialize(data: &StDataset, graph: &SpatialGraph, hits: Vec<(Hit, f64)>) -> Vec<Window> {
    let n = data.n_areas();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (h, log_lrt) in hits {
        let cyl = Cylinder {
            center: h.center,
            areas: graph.knn_rank(h.center)[..h.len].to_vec(),
            t1: h.t1,
            t2: h.t2,
        };
        if !seen.insert(cyl.key()) {
            continue;
        }
        let cells = cyl.cells();
        let obs_in = cells.iter().map(|c| data.observed()[c.index(n)]).sum();
        let exp_in = cells.iter().map(|c| data.expected()[c.index(n)]).sum();
        out.push(Window {
            cells,
            direction: h.direction,
            obs_in,
            exp_in,
            log_lrt,
        });
    }
    out
}

/// Null distributions of the maximal cylinder statistics.
pub fn cylinder_null(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams) -> NullDistribution {
    let limits = base_limits(data, graph, params);
    let max_len = params.max_length(data.n_periods());
    monte_carlo_with(data, params.seed, params.n_replicates, |counts| {
        maxima(counts, data, graph, &limits, max_len)
    })
}

/// Cylindrical scan with Monte Carlo significance and disjoint secondary clusters.
pub fn scan_cylindrical(data: &StDataset, graph: &SpatialGraph, params: &CylinderParams) -> ClusterSet {
    let nulls = cylinder_null(data, graph, params);
    let (high_cut, low_cut) = (
        significance_cut(&nulls.high, params.alpha),
        significance_cut(&nulls.low, params.alpha),
    );
    let (best_high, best_low) = maxima(data.observed(), data, graph, &base_limits(data, graph, params), params.max_length(data.n_periods()));
    let null_ll = Totals::new(data.observed(), data.expected()).null_ll;
    // Only significant cylinders and the most likely ones are kept as windows.
    let hits = all_hits(data, graph, params, |h| {
        let v = h.value + null_ll;
        match h.direction {
            Direction::High => v >= high_cut || v >= best_high,
            Direction::Low => v >= low_cut || v >= best_low,
        }
    });
    let windows = materialize(data, graph, hits);
    significant_clusters(
        &windows,
        &nulls,
        params.alpha,
        params.directions,
        data.n_cells(),
        data.n_areas(),
    )
}

/// Smallest statistic value whose p-value can be ≤ alpha, relaxed slightly for rounding.
fn significance_cut(null: &[f64], alpha: f64) -> f64 {
    let m = null.len();
    // p = (1 + #{s ≥ v}) / (m + 1) ≤ alpha  ⇔  #{s ≥ v} ≤ alpha(m+1) − 1.
    let allowed = (alpha * (m + 1) as f64 + 1e-9).floor() as i64 - 1;
    if allowed < 0 {
        return f64::INFINITY;
    }
    let allowed = allowed as usize;
    if allowed >= m {
        return f64::NEG_INFINITY;
    }
    let v = null[m - 1 - allowed];
    v - 1e-9 * v.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{log_lrt, p_value};

    fn flat(n: usize, t: usize) -> StDataset {
        StDataset::from_counts(n, t, vec![2; n * t], vec![2.0; n * t]).unwrap()
    }

    #[test]
    fn singleton_single_period_count() {
        let g = SpatialGraph::grid(3, 3);
        let d = flat(9, 4);
        let p = CylinderParams {
            max_spatial_fraction: 0.01,
            max_temporal_fraction: 0.1,
            ..Default::default()
        };
        assert_eq!(enumerate_cylinders(&d, &g, &p).len(), 9 * 4);
    }

    #[test]
    fn three_area_full_caps() {
        let g = SpatialGraph::path(3);
        let d = flat(3, 2);
        let p = CylinderParams {
            max_spatial_fraction: 1.0,
            max_temporal_fraction: 1.0,
            ..Default::default()
        };
        let cyl = enumerate_cylinders(&d, &g, &p);
        // Bases: {0},{1},{2},{0,1},{1,2},{0,1,2}; the middle area's tie goes to area 0.
        let bases: BTreeSet<Vec<usize>> = cyl.iter().map(|c| c.key().0).collect();
        let expect: BTreeSet<Vec<usize>> = [vec![0], vec![1], vec![2], vec![0, 1], vec![1, 2], vec![0, 1, 2]]
            .into_iter()
            .collect();
        assert_eq!(bases, expect);
        assert_eq!(cyl.len(), 6 * 3);
    }

    #[test]
    fn flat_surface_has_no_positive_statistic() {
        let g = SpatialGraph::grid(3, 3);
        let d = flat(9, 3);
        for w in cylinder_windows(&d, &g, &CylinderParams::default()) {
            assert!(w.log_lrt.abs() < 1e-9);
        }
    }

    #[test]
    fn bases_are_distance_prefixes() {
        let g = SpatialGraph::grid(4, 3);
        let d = flat(12, 3);
        for c in enumerate_cylinders(&d, &g, &CylinderParams::default()) {
            let far = c.areas.iter().map(|&a| g.distance(c.center, a)).fold(0.0, f64::max);
            for b in 0..12 {
                if g.distance(c.center, b) < far {
                    assert!(c.areas.contains(&b));
                }
            }
        }
    }

    #[test]
    fn planted_cylinder_recovered_exactly() {
        let g = SpatialGraph::grid(5, 5);
        let (n, t) = (25, 5);
        let planted = Cylinder {
            center: 12,
            areas: g.knn_rank(12)[..5].to_vec(),
            t1: 1,
            t2: 3,
        };
        let mut obs = vec![4u64; n * t];
        for c in planted.cells() {
            obs[c.index(n)] = 14;
        }
        let d = StDataset::from_counts(n, t, obs, vec![4.0; n * t]).unwrap();
        let p = CylinderParams::default().replicates(19).seed(3);

        // Brute-force oracle over the enumerated family.
        let (total_o, total_e) = (d.total_observed(), d.total_expected());
        let mut best = (f64::NEG_INFINITY, None);
        for c in enumerate_cylinders(&d, &g, &p) {
            let cells = c.cells();
            let o: u64 = cells.iter().map(|x| d.observed_at(*x)).sum();
            let e: f64 = cells.iter().map(|x| d.expected_at(*x)).sum();
            if let Ok(Some(v)) = log_lrt(o, e, total_o, total_e, Direction::High) {
                if v > best.0 {
                    best = (v, Some(c.key()));
                }
            }
        }
        assert_eq!(best.1, Some(planted.key()));

        let set = scan_cylindrical(&d, &g, &p);
        let top = &set.clusters[0];
        let mut got: Vec<StCell> = top.window.cells.clone();
        got.sort();
        let mut want = planted.cells();
        want.sort();
        assert_eq!(got, want);
        assert!((top.window.log_lrt - best.0).abs() < 1e-9);
        assert!((top.p_value - p_value(top.window.log_lrt, &set.null_high)).abs() < 1e-15);
    }

    #[test]
    fn low_direction_filtered_out() {
        let g = SpatialGraph::grid(4, 4);
        let (n, t) = (16, 3);
        let mut obs = vec![10u64; n * t];
        for a in [0, 1, 4, 5] {
            for p in 0..t {
                obs[p * n + a] = 1;
            }
        }
        let d = StDataset::from_counts(n, t, obs, vec![10.0; n * t]).unwrap();
        let both = scan_cylindrical(&d, &g, &CylinderParams::default().replicates(39));
        assert!(both.clusters.iter().any(|c| c.window.direction == Direction::Low));
        let high = scan_cylindrical(&d, &g, &CylinderParams::default().replicates(39).directions(Directions::HIGH));
        assert!(high.clusters.iter().all(|c| c.window.direction == Direction::High));
    }

    #[test]
    fn cut_matches_p_value_rule() {
        let null: Vec<f64> = (0..99).map(f64::from).collect();
        let cut = significance_cut(&null, 0.05);
        assert!(p_value(cut + 1e-6, &null) <= 0.05);
        assert!(p_value(cut - 0.5, &null) > 0.05);
        assert_eq!(significance_cut(&null[..9], 0.05), f64::INFINITY);
    }
}
