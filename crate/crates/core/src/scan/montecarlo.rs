//! Conditional Monte Carlo null distributions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::par;
use crate::stdata::StDataset;
use crate::stgraph::SpatialGraph;

use super::grow::{scan_maxima_seq, Scratch};
use super::ScanParams;

/// Sorted per-replicate maxima of the High and Low statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NullDistribution {
    pub high: Vec<f64>,
    pub low: Vec<f64>,
}

impl NullDistribution {
    /// Builds from unsorted `(high, low)` pairs, one per replicate.
    pub fn from_maxima(maxima: Vec<(f64, f64)>) -> Self {
        let (mut high, mut low): (Vec<f64>, Vec<f64>) = maxima.into_iter().unzip();
        high.sort_by(f64::total_cmp);
        low.sort_by(f64::total_cmp);
        Self { high, low }
    }

    pub fn n_replicates(&self) -> usize {
        self.high.len()
    }

    pub fn for_direction(&self, d: super::Direction) -> &[f64] {
        match d {
            super::Direction::High => &self.high,
            super::Direction::Low => &self.low,
        }
    }
}

/// RNG for replicate `r`: stream `r` of a ChaCha generator keyed by `seed`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Redistributes the dataset's total cases across cells with probabilities ∝ expected.
///
/// Drawn as a chain of conditional binomials so the total is exact.
pub fn multinomial_counts(total: u64, expected: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = expected.len();
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + expected[k];
    }
    let mut remaining = total;
    let mut out = vec![0u64; n];
    for k in 0..n {
        if remaining == 0 {
            break;
        }
        if k + 1 == n {
            out[k] = remaining;
            break;
        }
        let p = (expected[k] / suffix[k]).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p).map(|b| b.sample(rng)).unwrap_or(0);
        out[k] = draw;
        remaining -= draw;
    }
    out
}

/// Counts for null replicate `r` (0-based) under the conditional multinomial null.
pub fn replicate_counts(data: &StDataset, seed: u64, r: u64) -> Vec<u64> {
    let mut rng = replicate_rng(seed, r);
    multinomial_counts(data.total_observed(), data.expected(), &mut rng)
}

/// Runs `maxima` on every null replicate in parallel and collects the sorted nulls.
pub fn monte_carlo_with<F>(data: &StDataset, seed: u64, n_replicates: usize, maxima: F) -> NullDistribution
where
    F: Fn(&[u64]) -> (f64, f64) + Sync + Send,
{
    let pairs = par::map_indexed(n_replicates, |r| {
        let counts = replicate_counts(data, seed, r as u64);
        maxima(&counts)
    });
    NullDistribution::from_maxima(pairs)
}

/// Null distributions of the greedy scan's maximal High and Low statistics.
pub fn monte_carlo_null(data: &StDataset, graph: &SpatialGraph, params: &ScanParams) -> NullDistribution {
    let n_areas = graph.n_areas();
    let pairs = par::map_indexed_init(
        params.n_replicates,
        || Scratch::new(n_areas),
        |scratch, r| {
            let counts = replicate_counts(data, params.seed, r as u64);
            scan_maxima_seq(&counts, data.expected(), graph, data.n_periods(), params, scratch)
        },
    );
    NullDistribution::from_maxima(pairs)
}

/// Monte Carlo p-value: `(1 + #{s ≥ stat}) / (M + 1)`; `null` must be sorted ascending.
pub fn p_value(stat: f64, null: &[f64]) -> f64 {
    let below = null.partition_point(|&s| s < stat);
    (1 + null.len() - below) as f64 / (null.len() + 1) as f64
}
