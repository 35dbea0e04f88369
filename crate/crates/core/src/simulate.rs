//! Scenario generator: planted clusters, GMRF background effects and Poisson counts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{self, ConstrainedSampler, ConstraintSet, InteractionType};
use crate::par;
use crate::scan::Direction;
use crate::stdata::{format_f64, StCell, StDataset};
use crate::stgraph::SpatialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Clusters only.
    A,
    /// Smooth spatio-temporal variation, no clusters.
    B,
    /// Smooth variation plus clusters.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subscenario {
    #[serde(rename = "1H")]
    OneHigh,
    #[serde(rename = "1L")]
    OneLow,
    #[serde(rename = "1H1L")]
    HighLow,
    #[serde(rename = "none")]
    None,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

impl std::str::FromStr for Subscenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1H" => Ok(Self::OneHigh),
            "1L" => Ok(Self::OneLow),
            "1H1L" => Ok(Self::HighLow),
            "NONE" | "" => Ok(Self::None),
            other => Err(format!("unknown subscenario `{other}`")),
        }
    }
}

impl std::fmt::Display for Subscenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OneHigh => "1H",
            Self::OneLow => "1L",
            Self::HighLow => "1H1L",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCluster {
    pub direction: Direction,
    pub cells: Vec<StCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub subscenario: Subscenario,
    pub clusters: Vec<PlantedCluster>,
    pub beta_high: f64,
    pub beta_low: f64,
    pub spatial_band: (f64, f64),
    pub temporal_band: (f64, f64),
    pub interaction_band: (f64, f64),
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, subscenario: Subscenario, clusters: Vec<PlantedCluster>, seed: u64) -> Self {
        Self {
            scenario,
            subscenario,
            clusters: if scenario == Scenario::B { Vec::new() } else { clusters },
            beta_high: 2.5f64.ln(),
            beta_low: 0.4f64.ln(),
            spatial_band: (0.85, 1.15),
            temporal_band: (0.85, 1.15),
            interaction_band: (0.95, 1.05),
            seed,
        }
    }

    /// Scenario on the built-in snake and block geometry.
    pub fn preset(scenario: Scenario, subscenario: Subscenario, geometry: &SnakeBlock, seed: u64) -> Self {
        let snake = |d| PlantedCluster {
            direction: d,
            cells: geometry.snake.clone(),
        };
        let clusters = match subscenario {
            Subscenario::OneHigh => vec![snake(Direction::High)],
            Subscenario::OneLow => vec![snake(Direction::Low)],
            Subscenario::HighLow => vec![
                snake(Direction::High),
                PlantedCluster {
                    direction: Direction::Low,
                    cells: geometry.block.clone(),
                },
            ],
            Subscenario::None => Vec::new(),
        };
        Self::new(scenario, subscenario, clusters, seed)
    }

    pub fn name(&self) -> String {
        match self.scenario {
            Scenario::B => "B".into(),
            s => format!("{s:?}_{}", self.subscenario),
        }
    }

    fn beta(&self, d: Direction) -> f64 {
        match d {
            Direction::High => self.beta_high,
            Direction::Low => self.beta_low,
        }
    }
}

/// Built-in cluster shapes on an `nx × ny` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnakeBlock {
    /// Diagonal staircase one area wide, over the later periods.
    pub snake: Vec<StCell>,
    /// 3×3 block in the lower-left corner, over the earlier periods.
    pub block: Vec<StCell>,
}

/// Snake and block geometry for a grid built by [`SpatialGraph::grid`].
pub fn snake_and_block(nx: usize, ny: usize, n_periods: usize) -> Result<SnakeBlock> {
    if nx < 6 || ny < 6 || n_periods < 2 {
        return Err(Error::DegenerateInput(format!(
            "snake geometry needs at least a 6x6 grid and 2 periods, got {nx}x{ny}x{n_periods}"
        )));
    }
    let len = 2 * (nx.min(ny) - 3);
    let mut areas = Vec::with_capacity(len);
    let (mut r, mut c) = (1, 1);
    for k in 0..len {
        areas.push(r * nx + c);
        if k % 2 == 0 {
            c += 1;
        } else {
            r += 1;
        }
    }
    let snake = (n_periods / 4..n_periods)
        .flat_map(|t| areas.iter().map(move |&a| StCell::new(a, t)))
        .collect();
    let block_periods = n_periods.div_ceil(2);
    let block = (0..block_periods)
        .flat_map(|t| {
            (ny - 3..ny).flat_map(move |r| (0..3).map(move |c| StCell::new(r * nx + c, t)))
        })
        .collect();
    Ok(SnakeBlock { snake, block })
}

/// Reduced-scale analog of a region dominated by one large area.
///
/// A 10×10 grid with 4 periods. Area 44 (the capital) carries a fixed share of
/// the expected mass. The snake walks the ring of radius 2 around the capital,
/// six areas per period over periods 1 to 3, consecutive periods sharing one area.
/// The block is the 3×3 lower-left corner over periods 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RingAnalog {
    pub graph: SpatialGraph,
    pub n_periods: usize,
    pub capital: usize,
    pub ring: Vec<usize>,
    pub geometry: SnakeBlock,
    pub background_e: f64,
    /// Capital share of a period's expected mass, counting every other area at the background level.
    pub capital_share: f64,
    /// Per-cell expected count on the ring when the snake is high-risk.
    pub snake_e_high: f64,
    /// Per-cell expected count on the ring when the snake is low-risk.
    pub snake_e_low: f64,
}

impl RingAnalog {
    pub const SIDE: usize = 10;

    pub fn new() -> Self {
        let side = Self::SIDE;
        let (c, r) = (4, 2);
        let id = |row: usize, col: usize| row * side + col;
        let mut ring = Vec::with_capacity(8 * r);
        for col in c - r..c + r {
            ring.push(id(c - r, col));
        }
        for row in c - r..c + r {
            ring.push(id(row, c + r));
        }
        for col in (c - r + 1..=c + r).rev() {
            ring.push(id(c + r, col));
        }
        for row in (c - r + 1..=c + r).rev() {
            ring.push(id(row, c - r));
        }
        let snake = (0..3)
            .flat_map(|k| (5 * k..5 * k + 6).map(move |i| (k, i)))
            .map(|(k, i)| StCell::new(ring[i % ring.len()], k + 1))
            .collect();
        let block = (0..2)
            .flat_map(|t| (side - 3..side).flat_map(move |row| (0..3).map(move |col| StCell::new(id(row, col), t))))
            .collect();
        Self {
            graph: SpatialGraph::grid(side, side),
            n_periods: 4,
            capital: id(c, c),
            ring,
            geometry: SnakeBlock { snake, block },
            background_e: 80.0,
            capital_share: 0.39,
            snake_e_high: 6.0,
            snake_e_low: 20.0,
        }
    }

    /// Expected counts with `snake_e` on every ring cell.
    pub fn expected(&self, snake_e: f64) -> Vec<f64> {
        let n = self.graph.n_areas();
        let mut area = vec![self.background_e; n];
        let share = self.capital_share;
        area[self.capital] = share / (1.0 - share) * self.background_e * (n - 1) as f64;
        for &a in &self.ring {
            area[a] = snake_e;
        }
        (0..n * self.n_periods).map(|k| area[k % n]).collect()
    }

    /// Expected counts for a subscenario: the low-risk snake gets the larger ring mass.
    pub fn expected_for(&self, subscenario: Subscenario) -> Vec<f64> {
        match subscenario {
            Subscenario::OneLow => self.expected(self.snake_e_low),
            _ => self.expected(self.snake_e_high),
        }
    }

    pub fn spec(&self, scenario: Scenario, subscenario: Subscenario, seed: u64) -> ScenarioSpec {
        ScenarioSpec::preset(scenario, subscenario, &self.geometry, seed)
    }
}

impl Default for RingAnalog {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl TargetStats {
    /// Summary of the expected counts in the paper's study region.
    pub const PAPER: Self = Self {
        min: 0.1,
        mean: 9.8,
        median: 2.3,
        max: 1003.0,
    };
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Heavy-tailed positive expected counts with prescribed minimum, maximum, median and mean.
///
/// Standard normal scores are mapped monotonically: log-linearly from the minimum
/// to the median, and through a power curve from the median to the maximum whose
/// exponent is bisected to match the mean.
pub fn synth_expected(graph: &SpatialGraph, n_periods: usize, target: TargetStats, seed: u64) -> Result<Vec<f64>> {
    let TargetStats { min, mean, median, max } = target;
    let n = graph.n_areas() * n_periods;
    if !(min > 0.0) || !(min <= median && median <= max && min <= mean && mean <= max) || n == 0 {
        return Err(Error::DegenerateInput(format!(
            "expected-count targets must satisfy 0 < min <= median, mean <= max, got {target:?}"
        )));
    }
    if max - min <= 1e-12 * max {
        return Ok(vec![min; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (zmin, zmax) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let s: Vec<f64> = z.iter().map(|v| (v - zmin) / (zmax - zmin)).collect();
    let s_med = median_of(&s).clamp(1e-9, 1.0 - 1e-9);
    let (lmin, lmed, lmax) = (min.ln(), median.ln(), max.ln());
    let map = |p: f64| -> Vec<f64> {
        s.iter()
            .map(|&u| {
                if u <= s_med {
                    (lmin + (lmed - lmin) * u / s_med).exp()
                } else {
                    let v = (u - s_med) / (1.0 - s_med);
                    (lmed + (lmax - lmed) * v.powf(p)).exp()
                }
            })
            .collect()
    };
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // The mean decreases in the exponent; bisect on its logarithm.
    let (mut lo, mut hi) = (-8.0_f64, 8.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_of(&map(mid.exp())) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = map((0.5 * (lo + hi)).exp());
    let imin = (0..n).min_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
    let imax = (0..n).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
    out[imin] = min;
    out[imax] = max;
    let (m, md) = (mean_of(&out), median_of(&out));
    if (m - mean).abs() > 0.15 * mean || (md - median).abs() > 0.15 * median {
        return Err(Error::DegenerateInput(format!(
            "cannot reach mean {mean} and median {median} with min {min} and max {max} on {n} cells (got {m:.3}, {md:.3})"
        )));
    }
    Ok(out)
}

/// Affine map of `effect` whose exponential spans exactly `[lo, hi]`.
pub fn rescale_effect(effect: &[f64], band: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = band;
    let (min, max) = effect
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if effect.is_empty() || !(max > min) || !(hi > lo) {
        return vec![0.0; effect.len()];
    }
    let a = (hi.ln() - lo.ln()) / (max - min);
    effect
        .iter()
        .map(|&x| if x == max { hi.ln() } else { lo.ln() + a * (x - min) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub log_risk: Vec<f64>,
    /// 1-based cluster id per cell.
    pub cluster_label: Vec<Option<usize>>,
    /// Direction of each cluster id (index `id − 1`).
    pub cluster_directions: Vec<Direction>,
    pub dataset: StDataset,
}

impl SimTruth {
    /// Direction of the true cluster covering each cell.
    pub fn direction_labels(&self) -> Vec<Option<Direction>> {
        self.cluster_label
            .iter()
            .map(|l| l.map(|id| self.cluster_directions[id - 1]))
            .collect()
    }

    /// Writes `area_id,period,log_risk,cluster_id`.
    pub fn write_truth_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let d = &self.dataset;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["area_id", "period", "log_risk", "cluster_id"])?;
        for (k, c) in d.cells().enumerate() {
            w.write_record([
                d.area_ids()[c.area].as_str(),
                d.period_labels()[c.period].as_str(),
                &format_f64(self.log_risk[k]),
                &self.cluster_label[k].map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `data.csv` and `truth.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.dataset.write_long_csv(dir.join("data.csv"))?;
        self.write_truth_csv(dir.join("truth.csv"))
    }
}

/// Ground truth read back from a truth CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub log_risk: Vec<f64>,
    pub cluster_label: Vec<Option<usize>>,
    /// Direction per cluster id, from the sign of its mean log-risk.
    pub cluster_directions: Vec<Direction>,
}

impl Truth {
    pub fn direction_labels(&self) -> Vec<Option<Direction>> {
        self.cluster_label
            .iter()
            .map(|l| l.map(|id| self.cluster_directions[id - 1]))
            .collect()
    }
}

/// Reads a truth CSV aligned with `data`.
pub fn read_truth_csv(path: impl AsRef<Path>, data: &StDataset) -> Result<Truth> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let n = data.n_areas();
    let mut log_risk = vec![f64::NAN; data.n_cells()];
    let mut label: Vec<Option<usize>> = vec![None; data.n_cells()];
    let periods = data.period_labels();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::parse(path, format!("expected 4 fields, got {}", rec.len())));
        }
        let a = data
            .area_index(rec[0].trim())
            .ok_or_else(|| Error::UnknownArea(rec[0].to_string()))?;
        let t = periods
            .iter()
            .position(|p| p == rec[1].trim())
            .ok_or_else(|| Error::parse(path, format!("unknown period `{}`", &rec[1])))?;
        let k = StCell::new(a, t).index(n);
        log_risk[k] = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, format!("bad log_risk `{}`", &rec[2])))?;
        let id = rec[3].trim();
        if !id.is_empty() {
            let id: usize = id
                .parse()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::parse(path, format!("bad cluster_id `{id}`")))?;
            label[k] = Some(id);
        }
    }
    if let Some(k) = log_risk.iter().position(|v| v.is_nan()) {
        let c = data.cell(k);
        return Err(Error::MissingCell {
            area: data.area_ids()[c.area].clone(),
            period: periods[c.period].clone(),
        });
    }
    let n_clusters = label.iter().flatten().max().copied().unwrap_or(0);
    let mut sums = vec![0.0; n_clusters];
    for (k, l) in label.iter().enumerate() {
        if let Some(id) = l {
            sums[id - 1] += log_risk[k];
        }
    }
    let cluster_directions = sums
        .iter()
        .map(|&s| if s < 0.0 { Direction::Low } else { Direction::High })
        .collect();
    Ok(Truth {
        log_risk,
        cluster_label: label,
        cluster_directions,
    })
}

/// Seed for dataset `k` of a batch.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Background effects `ξ`, `γ`, `δ` (Type IV), each rescaled to its band.
fn background(spec: &ScenarioSpec, graph: &SpatialGraph, n_periods: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = graph.n_areas();
    let r_xi = gmrf::icar_precision(graph);
    let r_gamma = gmrf::rw1_precision(n_periods)?;
    let r_delta = gmrf::interaction_structure(InteractionType::IV, &r_gamma, &r_xi, n, n_periods)?;
    let sum = |d: usize| ConstraintSet::new(d, vec![(0..d).map(|j| (j, 1.0)).collect()]);
    let xi = ConstrainedSampler::new(&r_xi, 1.0, &sum(n))?.draw(rng);
    let gamma = ConstrainedSampler::new(&r_gamma, 1.0, &sum(n_periods))?.draw(rng);
    let delta_c = gmrf::interaction_constraints(InteractionType::IV, n, n_periods);
    let delta = ConstrainedSampler::new(&r_delta, 1.0, &delta_c)?.draw(rng);
    let xi = rescale_effect(&xi, spec.spatial_band);
    let gamma = rescale_effect(&gamma, spec.temporal_band);
    let delta = rescale_effect(&delta, spec.interaction_band);
    Ok((0..n * n_periods)
        .map(|k| xi[k % n] + gamma[k / n] + delta[k])
        .collect())
}

/// One simulated dataset.
pub fn gen_scenario(spec: &ScenarioSpec, graph: &SpatialGraph, expected: &[f64]) -> Result<SimTruth> {
    let n = graph.n_areas();
    if n == 0 || expected.len() % n != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} expected counts do not fill a lattice of {n} areas",
            expected.len()
        )));
    }
    let t = expected.len() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log_risk = match spec.scenario {
        Scenario::A => vec![0.0; n * t],
        Scenario::B | Scenario::C => background(spec, graph, t, &mut rng)?,
    };
    let mut label = vec![None; n * t];
    for (j, c) in spec.clusters.iter().enumerate() {
        let beta = spec.beta(c.direction);
        for cell in &c.cells {
            if cell.area >= n || cell.period >= t {
                return Err(Error::DimensionMismatch(format!(
                    "cluster {} cell ({}, {}) outside the {n}x{t} lattice",
                    j + 1,
                    cell.area,
                    cell.period
                )));
            }
            let k = cell.index(n);
            if label[k].is_none() {
                log_risk[k] += beta;
                label[k] = Some(j + 1);
            }
        }
    }
    let observed = log_risk
        .iter()
        .zip(expected)
        .map(|(lr, e)| {
            let mu = e * lr.exp();
            Poisson::new(mu).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
        })
        .collect();
    let dataset = StDataset::new(
        graph.area_ids().to_vec(),
        (1..=t).map(|p| p.to_string()).collect(),
        observed,
        expected.to_vec(),
    )?;
    Ok(SimTruth {
        log_risk,
        cluster_label: label,
        cluster_directions: spec.clusters.iter().map(|c| c.direction).collect(),
        dataset,
    })
}

/// `n_datasets` independent replicates; dataset `k` uses `derive_seed(spec.seed, k)`.
pub fn batch(spec: &ScenarioSpec, graph: &SpatialGraph, expected: &[f64], n_datasets: usize) -> Result<Vec<SimTruth>> {
    par::map_indexed(n_datasets, |k| {
        let s = ScenarioSpec {
            seed: derive_seed(spec.seed, k as u64),
            ..spec.clone()
        };
        gen_scenario(&s, graph, expected)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_expected_summary() {
        let g = SpatialGraph::grid(265, 1);
        let e = synth_expected(&g, 8, TargetStats::PAPER, 1).unwrap();
        assert_eq!(e.len(), 265 * 8);
        let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = e.iter().cloned().fold(0.0, f64::max);
        assert_eq!((min, max), (0.1, 1003.0));
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        assert!((8.3..=11.3).contains(&mean), "{mean}");
        let other = synth_expected(&g, 8, TargetStats::PAPER, 2).unwrap();
        assert_ne!(e, other);
        let omin = other.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(omin, 0.1);
    }

    #[test]
    fn degenerate_targets() {
        let g = SpatialGraph::grid(3, 3);
        let flat = TargetStats {
            min: 1.0,
            mean: 1.0,
            median: 1.0,
            max: 1.0,
        };
        assert_eq!(synth_expected(&g, 2, flat, 0).unwrap(), vec![1.0; 18]);
        let bad = TargetStats {
            min: 0.1,
            mean: 0.2,
            median: 50.0,
            max: 100.0,
        };
        assert!(matches!(synth_expected(&g, 2, bad, 0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn rescale_examples() {
        let r = rescale_effect(&[-1.0, 0.0, 1.0], (0.85, 1.15));
        let e: Vec<f64> = r.iter().map(|v| v.exp()).collect();
        assert!((e[0] - 0.85).abs() < 1e-12 && (e[2] - 1.15).abs() < 1e-12);
        assert!((e[1] - ((0.85f64.ln() + 1.15f64.ln()) / 2.0).exp()).abs() < 1e-12);
        assert!((e[1] - 0.9887).abs() < 1e-4);
        assert_eq!(rescale_effect(&[2.0, 2.0], (0.85, 1.15)), vec![0.0, 0.0]);
        assert_eq!(rescale_effect(&[1.0, 2.0], (1.0, 1.0)), vec![0.0, 0.0]);
    }

    fn setup() -> (SpatialGraph, Vec<f64>, SnakeBlock) {
        let g = SpatialGraph::grid(8, 8);
        let e = vec![3.0; 64 * 4];
        let geo = snake_and_block(8, 8, 4).unwrap();
        (g, e, geo)
    }

    #[test]
    fn scenario_a_risk_levels() {
        let (g, e, geo) = setup();
        let spec = ScenarioSpec::preset(Scenario::A, Subscenario::HighLow, &geo, 5);
        let s = gen_scenario(&spec, &g, &e).unwrap();
        for (k, lr) in s.log_risk.iter().enumerate() {
            let r = lr.exp();
            let want = match s.cluster_label[k] {
                Some(1) => 2.5,
                Some(2) => 0.4,
                _ => 1.0,
            };
            assert!((r - want).abs() < 1e-12);
        }
        assert_eq!(s.cluster_directions, vec![Direction::High, Direction::Low]);
    }

    #[test]
    fn scenario_b_and_c_bands() {
        let (g, e, geo) = setup();
        let b = gen_scenario(&ScenarioSpec::preset(Scenario::B, Subscenario::OneHigh, &geo, 9), &g, &e).unwrap();
        assert!(b.cluster_label.iter().all(Option::is_none));
        let lo = 0.85f64.ln() * 2.0 + 0.95f64.ln();
        let hi = 1.15f64.ln() * 2.0 + 1.05f64.ln();
        assert!(b.log_risk.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));

        let spec = ScenarioSpec::preset(Scenario::C, Subscenario::HighLow, &geo, 9);
        let c = gen_scenario(&spec, &g, &e).unwrap();
        for k in 0..c.log_risk.len() {
            let diff = c.log_risk[k] - b.log_risk[k];
            let want = match c.cluster_label[k] {
                Some(1) => 2.5f64.ln(),
                Some(2) => 0.4f64.ln(),
                _ => 0.0,
            };
            assert!((diff - want).abs() < 1e-12, "cell {k}");
        }
    }

    #[test]
    fn batch_is_deterministic_and_distinct() {
        let (g, e, geo) = setup();
        let spec = ScenarioSpec::preset(Scenario::A, Subscenario::OneHigh, &geo, 11);
        let a = batch(&spec, &g, &e, 6).unwrap();
        assert_eq!(a, batch(&spec, &g, &e, 6).unwrap());
        for i in 0..6 {
            for j in i + 1..6 {
                assert_ne!(a[i].dataset.observed(), a[j].dataset.observed());
            }
        }
        let one = batch(&spec, &g, &e, 1).unwrap();
        let direct = gen_scenario(
            &ScenarioSpec {
                seed: derive_seed(11, 0),
                ..spec
            },
            &g,
            &e,
        )
        .unwrap();
        assert_eq!(one[0], direct);
    }

    #[test]
    fn truth_round_trip() {
        let (g, e, geo) = setup();
        let s = gen_scenario(&ScenarioSpec::preset(Scenario::C, Subscenario::HighLow, &geo, 2), &g, &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_dir(dir.path()).unwrap();
        let t = read_truth_csv(dir.path().join("truth.csv"), &s.dataset).unwrap();
        assert_eq!(t.log_risk, s.log_risk);
        assert_eq!(t.cluster_label, s.cluster_label);
        assert_eq!(t.direction_labels(), s.direction_labels());
    }

    #[test]
    fn snake_is_connected_staircase() {
        let geo = snake_and_block(10, 10, 4).unwrap();
        assert_eq!(geo.snake.len(), 14 * 3);
        assert_eq!(geo.block.len(), 9 * 2);
        let g = SpatialGraph::grid(10, 10);
        let areas: Vec<usize> = geo.snake.iter().filter(|c| c.period == 1).map(|c| c.area).collect();
        for w in areas.windows(2) {
            assert!(g.are_adjacent(w[0], w[1]));
        }
    }

    #[test]
    fn ring_analog_layout() {
        let r = RingAnalog::new();
        let want = "22,23,24,25,26,36;36,46,56,66,65,64;64,63,62,52,42,32";
        let got: Vec<String> = (1..=3)
            .map(|t| {
                let a: Vec<String> = r.geometry.snake.iter().filter(|c| c.period == t).map(|c| c.area.to_string()).collect();
                a.join(",")
            })
            .collect();
        assert_eq!(got.join(";"), want);
        for w in r.geometry.snake.windows(2) {
            if w[0].period == w[1].period {
                assert!(r.graph.are_adjacent(w[0].area, w[1].area));
            }
        }
        assert_eq!(r.ring.len(), 16);
        let e = r.expected(5.0);
        assert_eq!(e.len(), 400);
        let non_ring: f64 = (0..100).filter(|a| !r.ring.contains(a)).map(|a| e[a]).sum();
        assert!((e[44] / (99.0 * r.background_e + e[44]) - r.capital_share).abs() < 1e-12);
        assert!(non_ring > e[44]);
        assert_eq!(r.expected_for(Subscenario::OneLow)[22], r.snake_e_low);
        assert!(r.geometry.block.iter().all(|c| !r.ring.contains(&c.area) && c.area != 44));
    }
}
