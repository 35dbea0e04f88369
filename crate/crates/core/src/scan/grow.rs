//! Greedy window growth inside a limiting window.

use crate::par;
use crate::stdata::{StCell, StDataset};
use crate::stgraph::SpatialGraph;

use super::stat::{log_lrt_unchecked, null_log_likelihood, Direction};
use super::{ScanParams, Window};

/// Totals shared by every window evaluated on one set of counts.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Totals {
    pub obs: f64,
    pub exp: f64,
    /// Observed-to-expected ratio of the whole region.
    pub scale: f64,
    pub null_ll: f64,
}

impl Totals {
    pub fn new(observed: &[u64], expected: &[f64]) -> Self {
        let total_obs: u64 = observed.iter().sum();
        let exp: f64 = expected.iter().sum();
        Self {
            obs: total_obs as f64,
            exp,
            scale: total_obs as f64 / exp,
            null_ll: null_log_likelihood(total_obs, exp),
        }
    }

    /// Log-LRT minus the single-rate fit, so it is never negative; `None` if the direction does not hold.
    #[inline]
    pub fn statistic(&self, obs_in: f64, exp_in: f64, direction: Direction) -> Option<f64> {
        if exp_in >= self.exp {
            return None;
        }
        log_lrt_unchecked(obs_in, exp_in, self.obs, self.exp, direction).map(|v| (v - self.null_ll).max(0.0))
    }
}

/// Per-worker buffer mapping areas to their slot in the current limiting window.
pub(crate) struct Scratch {
    slot: Vec<u32>,
}

impl Scratch {
    pub fn new(n_areas: usize) -> Self {
        Self {
            slot: vec![u32::MAX; n_areas],
        }
    }
}

pub(crate) struct Grown {
    pub direction: Direction,
    pub value: f64,
    pub obs: u64,
    pub exp: f64,
    pub cells: Vec<StCell>,
}

const OUTSIDE: u8 = 0;
const FRONTIER: u8 = 1;
const INSIDE: u8 = 2;

/// Grows a window from `center` by repeatedly adding the frontier cell that gives the
/// largest statistic, stopping as soon as no addition strictly improves it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grow(
    observed: &[u64],
    expected: &[f64],
    totals: &Totals,
    graph: &SpatialGraph,
    n_periods: usize,
    center: StCell,
    params: &ScanParams,
    scratch: &mut Scratch,
    keep_cells: bool,
) -> Grown {
    let n_areas = graph.n_areas();
    let k = params.k.clamp(1, n_areas);
    let areas = &graph.knn_rank(center.area)[..k];
    let lo = center.period.saturating_sub(params.t_star);
    let hi = (center.period + params.t_star).min(n_periods - 1);
    let width = hi - lo + 1;
    for (s, &a) in areas.iter().enumerate() {
        scratch.slot[a] = s as u32;
    }
    let mut state = vec![OUTSIDE; k * width];
    let local = |slot: &[u32], c: StCell| -> Option<usize> {
        let s = slot[c.area];
        (s != u32::MAX && c.period >= lo && c.period <= hi).then(|| s as usize * width + (c.period - lo))
    };

    let ci = center.index(n_areas);
    let direction = if (observed[ci] as f64) < totals.scale * expected[ci] {
        Direction::Low
    } else {
        Direction::High
    };
    let mut obs = observed[ci];
    let mut exp = expected[ci];
    let mut current = totals.statistic(obs as f64, exp, direction).unwrap_or(0.0);
    let mut cells = Vec::new();
    if keep_cells {
        cells.push(center);
    }
    state[local(&scratch.slot, center).expect("center inside its window")] = INSIDE;

    let mut front: Vec<(usize, StCell)> = Vec::new();
    let push_neighbors = |cell: StCell, state: &mut Vec<u8>, front: &mut Vec<(usize, StCell)>| {
        let mut add = |c: StCell| {
            if let Some(l) = local(&scratch.slot, c) {
                if state[l] == OUTSIDE {
                    state[l] = FRONTIER;
                    front.push((c.index(n_areas), c));
                }
            }
        };
        for &b in graph.neighbors(cell.area) {
            add(StCell::new(b, cell.period));
        }
        if cell.period > 0 {
            add(StCell::new(cell.area, cell.period - 1));
        }
        if cell.period + 1 < n_periods {
            add(StCell::new(cell.area, cell.period + 1));
        }
    };
    push_neighbors(center, &mut state, &mut front);

    if totals.obs > 0.0 {
        loop {
            let mut best: Option<(f64, usize, usize)> = None; // (value, canonical index, position)
            for (pos, &(idx, _)) in front.iter().enumerate() {
                let e = exp + expected[idx];
                let Some(v) = totals.statistic((obs + observed[idx]) as f64, e, direction) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some((bv, bi, _)) => v > bv || (v == bv && idx < bi),
                };
                if better {
                    best = Some((v, idx, pos));
                }
            }
            let Some((v, idx, pos)) = best else { break };
            if v <= current {
                break;
            }
            let (_, cell) = front.swap_remove(pos);
            state[local(&scratch.slot, cell).expect("frontier inside window")] = INSIDE;
            obs += observed[idx];
            exp += expected[idx];
            current = v;
            if keep_cells {
                cells.push(cell);
            }
            push_neighbors(cell, &mut state, &mut front);
        }
    }

    for &a in areas {
        scratch.slot[a] = u32::MAX;
    }
    Grown {
        direction,
        value: current,
        obs,
        exp,
        cells,
    }
}

/// Greedy window for a single center cell.
pub fn grow_window(data: &StDataset, graph: &SpatialGraph, center: StCell, params: &ScanParams) -> Window {
    let totals = Totals::new(data.observed(), data.expected());
    let mut scratch = Scratch::new(graph.n_areas());
    let g = grow(
        data.observed(),
        data.expected(),
        &totals,
        graph,
        data.n_periods(),
        center,
        params,
        &mut scratch,
        true,
    );
    Window {
        cells: g.cells,
        direction: g.direction,
        obs_in: g.obs,
        exp_in: g.exp,
        log_lrt: g.value + totals.null_ll,
    }
}

/// One greedy window per lattice cell, in canonical cell order.
pub fn scan_all(data: &StDataset, graph: &SpatialGraph, params: &ScanParams) -> Vec<Window> {
    let totals = Totals::new(data.observed(), data.expected());
    let n_areas = graph.n_areas();
    par::map_indexed_init(
        data.n_cells(),
        || Scratch::new(n_areas),
        |scratch, k| {
            let g = grow(
                data.observed(),
                data.expected(),
                &totals,
                graph,
                data.n_periods(),
                StCell::from_index(k, n_areas),
                params,
                scratch,
                true,
            );
            Window {
                cells: g.cells,
                direction: g.direction,
                obs_in: g.obs,
                exp_in: g.exp,
                log_lrt: g.value + totals.null_ll,
            }
        },
    )
}

/// Largest High and Low statistics over all greedy windows, computed on one thread.
pub(crate) fn scan_maxima_seq(
    observed: &[u64],
    expected: &[f64],
    graph: &SpatialGraph,
    n_periods: usize,
    params: &ScanParams,
    scratch: &mut Scratch,
) -> (f64, f64) {
    let totals = Totals::new(observed, expected);
    let n_areas = graph.n_areas();
    let (mut high, mut low) = (0.0_f64, 0.0_f64);
    if totals.obs == 0.0 {
        return (high, low);
    }
    for k in 0..observed.len() {
        let g = grow(
            observed,
            expected,
            &totals,
            graph,
            n_periods,
            StCell::from_index(k, n_areas),
            params,
            scratch,
            false,
        );
        match g.direction {
            Direction::High => high = high.max(g.value),
            Direction::Low => low = low.max(g.value),
        }
    }
    (high + totals.null_ll, low + totals.null_ll)
}
