//! Spatial adjacency, centroid-distance ranking and the space-time neighborhoods
//! that bound the greedy search.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stdata::{format_f64, StCell, StDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    area_ids: Vec<String>,
    adjacency: Vec<Vec<usize>>,
    centroids: Vec<(f64, f64)>,
    knn_rank: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Builds a graph from undirected edges (by index) and planar centroids.
    ///
    /// Edges are symmetrized and deduplicated; self-loops are dropped.
    pub fn new(area_ids: Vec<String>, edges: &[(usize, usize)], centroids: Vec<(f64, f64)>) -> Result<Self> {
        let n = area_ids.len();
        if centroids.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} areas but {} centroids", centroids.len())));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::UnknownArea(format!("index {}", a.max(b))));
            }
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        let adjacency: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let knn_rank = (0..n).map(|i| rank_by_distance(&centroids, i)).collect();
        let g = Self {
            area_ids,
            adjacency,
            centroids,
            knn_rank,
        };
        if n > 0 && g.n_components() > 1 {
            log::warn!("spatial graph has {} connected components", g.n_components());
        }
        Ok(g)
    }

    /// Rook-adjacency grid with `nx` columns and `ny` rows; area `r * nx + c` sits at `(c, r)`.
    pub fn grid(nx: usize, ny: usize) -> Self {
        let mut edges = Vec::new();
        let mut centroids = Vec::with_capacity(nx * ny);
        let mut ids = Vec::with_capacity(nx * ny);
        for r in 0..ny {
            for c in 0..nx {
                let i = r * nx + c;
                ids.push(format!("r{r}c{c}"));
                centroids.push((c as f64, r as f64));
                if c + 1 < nx {
                    edges.push((i, i + 1));
                }
                if r + 1 < ny {
                    edges.push((i, i + nx));
                }
            }
        }
        Self::new(ids, &edges, centroids).expect("grid construction is valid")
    }

    /// Path graph `0 - 1 - ... - (n-1)` on the x axis.
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(
            (0..n).map(|i| format!("a{i}")).collect(),
            &edges,
            (0..n).map(|i| (i as f64, 0.0)).collect(),
        )
        .expect("path construction is valid")
    }

    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn neighbors(&self, area: usize) -> &[usize] {
        &self.adjacency[area]
    }

    pub fn degree(&self, area: usize) -> usize {
        self.adjacency[area].len()
    }

    pub fn centroid(&self, area: usize) -> (f64, f64) {
        self.centroids[area]
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    /// All areas by ascending centroid distance from `area` (itself first, ties by index).
    pub fn knn_rank(&self, area: usize) -> &[usize] {
        &self.knn_rank[area]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.centroids[a];
        let (xb, yb) = self.centroids[b];
        (xa - xb).hypot(ya - yb)
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nb) in self.adjacency.iter().enumerate() {
            out.extend(nb.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    /// Component label per area, labels assigned in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n_areas();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(a) = stack.pop() {
                for &b in &self.adjacency[a] {
                    if label[b] == usize::MAX {
                        label[b] = next;
                        stack.push(b);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn n_components(&self) -> usize {
        self.components().iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.n_components() <= 1
    }

    /// Checks that the graph's areas line up with a dataset's.
    pub fn check_matches(&self, data: &StDataset) -> Result<()> {
        if self.area_ids != data.area_ids() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} areas, dataset {}; ids or order differ",
                self.n_areas(),
                data.n_areas()
            )));
        }
        Ok(())
    }

    /// Reorders areas to `order` (e.g. a dataset's area ids).
    pub fn reordered(&self, order: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self.area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        if order.len() != self.n_areas() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} areas, requested order {}",
                self.n_areas(),
                order.len()
            )));
        }
        let old: Vec<usize> = order
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::UnknownArea(id.clone())))
            .collect::<Result<_>>()?;
        let mut new_of_old = vec![0; old.len()];
        for (new, &o) in old.iter().enumerate() {
            new_of_old[o] = new;
        }
        let edges: Vec<_> = self.edges().iter().map(|&(a, b)| (new_of_old[a], new_of_old[b])).collect();
        let centroids = old.iter().map(|&o| self.centroids[o]).collect();
        Self::new(order.to_vec(), &edges, centroids)
    }

    pub fn write_adjacency_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["area_id_1", "area_id_2"])?;
        for (a, b) in self.edges() {
            w.write_record([&self.area_ids[a], &self.area_ids[b]])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_centroids_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["area_id", "x", "y"])?;
        for (id, &(x, y)) in self.area_ids.iter().zip(&self.centroids) {
            w.write_record([id.as_str(), &format_f64(x), &format_f64(y)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rank_by_distance(centroids: &[(f64, f64)], from: usize) -> Vec<usize> {
    let (x0, y0) = centroids[from];
    let mut keyed: Vec<(f64, usize)> = centroids
        .iter()
        .enumerate()
        .map(|(j, &(x, y))| ((x - x0).hypot(y - y0), j))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // Keep the center first even if another area shares its centroid.
    if keyed[0].1 != from {
        let pos = keyed.iter().position(|k| k.1 == from).expect("center present");
        let c = keyed.remove(pos);
        keyed.insert(0, c);
    }
    keyed.into_iter().map(|k| k.1).collect()
}

/// Loads a graph from an edge-list CSV and a centroid CSV.
///
/// Areas are taken from the centroid file and sorted by id, unless `area_order` is given.
pub fn build_graph(
    adjacency_path: impl AsRef<Path>,
    centroids_path: impl AsRef<Path>,
    area_order: Option<&[String]>,
) -> Result<SpatialGraph> {
    let cpath = centroids_path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(cpath)?;
    let mut cent = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::parse(cpath, format!("row {}: bad coordinate", line + 2)))
        };
        let xy = (parse(1)?, parse(2)?);
        if cent.insert(id.clone(), xy).is_some() {
            return Err(Error::parse(cpath, format!("area `{id}` has two centroids")));
        }
    }
    let ids: Vec<String> = match area_order {
        Some(order) => {
            for id in cent.keys() {
                if !order.contains(id) {
                    return Err(Error::UnknownArea(id.clone()));
                }
            }
            order.to_vec()
        }
        None => cent.keys().cloned().collect(),
    };
    let centroids = ids
        .iter()
        .map(|id| {
            cent.get(id)
                .copied()
                .ok_or_else(|| Error::parse(cpath, format!("area `{id}` has no centroid")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let apath = adjacency_path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(apath)?;
    let mut edges = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let lookup = |k: usize| {
            let id = rec.get(k).unwrap_or("");
            pos.get(id).copied().ok_or_else(|| Error::UnknownArea(id.to_string()))
        };
        edges.push((lookup(0)?, lookup(1)?));
    }
    SpatialGraph::new(ids.clone(), &edges, centroids)
}

/// The cylinder of the `k` nearest areas and a ±`t_star` period band around a center cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimitingWindow {
    pub center: StCell,
    /// Allowed areas in rank order (center first).
    pub areas: Vec<usize>,
    /// Inclusive period range.
    pub period_lo: usize,
    pub period_hi: usize,
}

impl LimitingWindow {
    pub fn n_periods(&self) -> usize {
        self.period_hi - self.period_lo + 1
    }

    pub fn contains(&self, cell: StCell) -> bool {
        cell.period >= self.period_lo && cell.period <= self.period_hi && self.areas.contains(&cell.area)
    }

    pub fn allowed_cells(&self) -> BTreeSet<StCell> {
        let mut out = BTreeSet::new();
        for t in self.period_lo..=self.period_hi {
            for &a in &self.areas {
                out.insert(StCell::new(a, t));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.areas.len() * self.n_periods()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }
}

/// Limiting window around `center`. `k` is clamped to `[1, n_areas]`.
pub fn limiting_window(graph: &SpatialGraph, center: StCell, k: usize, t_star: usize, n_periods: usize) -> LimitingWindow {
    let k = k.clamp(1, graph.n_areas());
    LimitingWindow {
        center,
        areas: graph.knn_rank(center.area)[..k].to_vec(),
        period_lo: center.period.saturating_sub(t_star),
        period_hi: (center.period + t_star).min(n_periods - 1),
    }
}

/// Cells of the limiting window adjacent (in space at the same period, or in time for
/// the same area) to some member of `window`, excluding the members themselves.
pub fn frontier(window: &BTreeSet<StCell>, limiting: &LimitingWindow, graph: &SpatialGraph) -> BTreeSet<StCell> {
    let mut out = BTreeSet::new();
    let mut consider = |c: StCell| {
        if !window.contains(&c) && limiting.contains(c) {
            out.insert(c);
        }
    };
    for &cell in window {
        for &b in graph.neighbors(cell.area) {
            consider(StCell::new(b, cell.period));
        }
        if cell.period > 0 {
            consider(StCell::new(cell.area, cell.period - 1));
        }
        consider(StCell::new(cell.area, cell.period + 1));
    }
    out
}

/// Result of [`aggregate_units`].
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub graph: SpatialGraph,
    pub dataset: StDataset,
    /// New unit index for every original area.
    pub mapping: Vec<usize>,
    /// Units still below the threshold because no same-label neighbor was left to absorb them.
    pub flagged: Vec<usize>,
}

impl Aggregation {
    /// Rows of the `old_area_id,new_unit_id` mapping report.
    pub fn mapping_rows(&self, old_ids: &[String]) -> Vec<(String, String)> {
        old_ids
            .iter()
            .zip(&self.mapping)
            .map(|(old, &u)| (old.clone(), self.graph.area_ids()[u].clone()))
            .collect()
    }

    pub fn write_mapping_csv(&self, old_ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["old_area_id", "new_unit_id"])?;
        for (old, new) in self.mapping_rows(old_ids) {
            w.write_record([old, new])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Merges adjacent same-label areas until every unit has at least `threshold` observed cases.
///
/// Repeatedly takes the unit with the fewest cases below the threshold (ties by lowest
/// member index) and joins it to its adjacent same-label unit with the fewest cases.
pub fn aggregate_units(
    graph: &SpatialGraph,
    data: &StDataset,
    threshold: u64,
    region_labels: &[String],
) -> Result<Aggregation> {
    graph.check_matches(data)?;
    let n = graph.n_areas();
    if region_labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} areas but {} labels", region_labels.len())));
    }
    let n_periods = data.n_periods();
    let area_total = |a: usize| -> u64 { (0..n_periods).map(|t| data.observed_at(StCell::new(a, t))).sum() };

    // Union-find keyed by smallest member index.
    let mut members: Vec<Vec<usize>> = (0..n).map(|a| vec![a]).collect();
    let mut alive = vec![true; n];
    let mut total: Vec<u64> = (0..n).map(area_total).collect();
    let mut nbrs: Vec<BTreeSet<usize>> = (0..n).map(|a| graph.neighbors(a).iter().copied().collect()).collect();
    let mut stuck = vec![false; n];

    loop {
        let pick = (0..n)
            .filter(|&u| alive[u] && !stuck[u] && total[u] < threshold)
            .min_by_key(|&u| (total[u], u));
        let Some(u) = pick else { break };
        let partner = nbrs[u]
            .iter()
            .copied()
            .filter(|&v| region_labels[v] == region_labels[u])
            .min_by_key(|&v| (total[v], v));
        let Some(v) = partner else {
            stuck[u] = true;
            continue;
        };
        let (keep, gone) = if u < v { (u, v) } else { (v, u) };
        let moved = std::mem::take(&mut members[gone]);
        members[keep].extend(moved);
        members[keep].sort_unstable();
        total[keep] += total[gone];
        alive[gone] = false;
        stuck[keep] = false;
        let gone_nbrs = std::mem::take(&mut nbrs[gone]);
        for w in gone_nbrs {
            nbrs[w].remove(&gone);
            if w != keep {
                nbrs[w].insert(keep);
                nbrs[keep].insert(w);
            }
        }
        nbrs[keep].remove(&keep);
        nbrs[keep].remove(&gone);
    }

    let units: Vec<usize> = (0..n).filter(|&u| alive[u]).collect();
    let mut unit_of_root = vec![usize::MAX; n];
    for (k, &u) in units.iter().enumerate() {
        unit_of_root[u] = k;
    }
    let mut mapping = vec![0; n];
    for &u in &units {
        for &a in &members[u] {
            mapping[a] = unit_of_root[u];
        }
    }
    let ids: Vec<String> = units
        .iter()
        .map(|&u| {
            members[u]
                .iter()
                .map(|&a| graph.area_ids()[a].as_str())
                .collect::<Vec<_>>()
                .join("+")
        })
        .collect();
    let centroids: Vec<(f64, f64)> = units
        .iter()
        .map(|&u| {
            let m = &members[u];
            let w: Vec<f64> = m.iter().map(|&a| area_total(a) as f64).collect();
            let wsum: f64 = w.iter().sum();
            let (wts, denom) = if wsum > 0.0 { (w, wsum) } else { (vec![1.0; m.len()], m.len() as f64) };
            let x = m.iter().zip(&wts).map(|(&a, w)| graph.centroid(a).0 * w).sum::<f64>() / denom;
            let y = m.iter().zip(&wts).map(|(&a, w)| graph.centroid(a).1 * w).sum::<f64>() / denom;
            (x, y)
        })
        .collect();
    let mut edges = BTreeSet::new();
    for (a, b) in graph.edges() {
        let (ua, ub) = (mapping[a], mapping[b]);
        if ua != ub {
            edges.insert((ua.min(ub), ua.max(ub)));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let new_graph = SpatialGraph::new(ids.clone(), &edges, centroids)?;

    let m = units.len();
    let mut observed = vec![0u64; m * n_periods];
    let mut expected = vec![0.0f64; m * n_periods];
    for cell in data.cells() {
        let k = StCell::new(mapping[cell.area], cell.period).index(m);
        observed[k] += data.observed_at(cell);
        expected[k] += data.expected_at(cell);
    }
    let dataset = StDataset::new(ids, data.period_labels().to_vec(), observed, expected)?;
    let flagged = units
        .iter()
        .enumerate()
        .filter(|(_, &u)| total[u] < threshold)
        .map(|(k, _)| k)
        .collect();
    Ok(Aggregation {
        graph: new_graph,
        dataset,
        mapping,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_neighbors() {
        let g = SpatialGraph::path(3);
        assert_eq!(g.neighbors(1), [0, 2]);
        assert_eq!(g.neighbors(0), [1]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = SpatialGraph::new(
            vec!["a".into(), "b".into()],
            &[(0, 1), (1, 0), (0, 1), (0, 0)],
            vec![(0.0, 0.0), (1.0, 0.0)],
        )
        .unwrap();
        assert_eq!(g.neighbors(0), [1]);
        assert_eq!(g.neighbors(1), [0]);
    }

    #[test]
    fn equidistant_ties_by_index() {
        let g = SpatialGraph::new(
            vec!["c".into(), "w".into(), "e".into(), "n".into()],
            &[(0, 1), (0, 2), (0, 3)],
            vec![(0.0, 0.0), (-1.0, 0.0), (1.0, 0.0), (0.0, 1.0)],
        )
        .unwrap();
        assert_eq!(g.knn_rank(0), [0, 1, 2, 3]);
    }

    #[test]
    fn limiting_window_degenerate_and_maximal() {
        let g = SpatialGraph::grid(3, 2);
        let c = StCell::new(4, 1);
        let w = limiting_window(&g, c, 1, 0, 3);
        assert_eq!(w.allowed_cells().into_iter().collect::<Vec<_>>(), vec![c]);
        let w = limiting_window(&g, c, 6, 5, 3);
        assert_eq!(w.len(), 18);
    }

    #[test]
    fn limiting_window_on_path() {
        // Areas 0 and 2 are equidistant from 1; the tie goes to 0.
        let g = SpatialGraph::path(4);
        let w = limiting_window(&g, StCell::new(1, 0), 2, 1, 3);
        let cells: Vec<_> = w.allowed_cells().into_iter().collect();
        assert_eq!(
            cells,
            vec![StCell::new(0, 0), StCell::new(1, 0), StCell::new(0, 1), StCell::new(1, 1)]
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn frontier_examples() {
        let g = SpatialGraph::path(3);
        let lw = limiting_window(&g, StCell::new(1, 0), 3, 0, 1);
        let f = frontier(&BTreeSet::from([StCell::new(1, 0)]), &lw, &g);
        assert_eq!(f, BTreeSet::from([StCell::new(0, 0), StCell::new(2, 0)]));

        let iso = SpatialGraph::new(vec!["x".into()], &[], vec![(0.0, 0.0)]).unwrap();
        let lw = limiting_window(&iso, StCell::new(0, 0), 1, 0, 1);
        assert!(frontier(&BTreeSet::from([StCell::new(0, 0)]), &lw, &iso).is_empty());

        let lw = limiting_window(&iso, StCell::new(0, 1), 1, 1, 3);
        let f = frontier(&BTreeSet::from([StCell::new(0, 1)]), &lw, &iso);
        assert_eq!(f, BTreeSet::from([StCell::new(0, 0), StCell::new(0, 2)]));
    }

    fn one_period(obs: &[u64]) -> StDataset {
        StDataset::from_counts(obs.len(), 1, obs.to_vec(), vec![1.0; obs.len()]).unwrap()
    }

    #[test]
    fn aggregation_identity_when_all_large() {
        let g = SpatialGraph::path(3);
        let d = one_period(&[20, 30, 40]);
        let labels = vec!["r".to_string(); 3];
        let agg = aggregate_units(&g, &d, 16, &labels).unwrap();
        assert_eq!(agg.mapping, vec![0, 1, 2]);
        assert!(agg.flagged.is_empty());
        assert_eq!(agg.dataset.observed(), d.observed());
    }

    #[test]
    fn aggregation_greedy_chain() {
        let g = SpatialGraph::path(3);
        let d = one_period(&[5, 7, 20]);
        let labels = vec!["r".to_string(); 3];
        let agg = aggregate_units(&g, &d, 16, &labels).unwrap();
        assert_eq!(agg.mapping, vec![0, 0, 0]);
        assert_eq!(agg.dataset.observed(), [32]);
        assert_eq!(agg.graph.area_ids(), ["a0+a1+a2"]);
    }

    #[test]
    fn aggregation_respects_labels() {
        let g = SpatialGraph::path(2);
        let d = one_period(&[5, 40]);
        let labels = vec!["x".to_string(), "y".to_string()];
        let agg = aggregate_units(&g, &d, 16, &labels).unwrap();
        assert_eq!(agg.mapping, vec![0, 1]);
        assert_eq!(agg.flagged, vec![0]);
    }
}
