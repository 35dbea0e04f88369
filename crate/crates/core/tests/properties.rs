use gscan::metrics::{estimation_metrics, interval_score, CellEstimate, CellFilter};
use gscan::scan::{detect, log_lrt, multinomial_counts, null_log_likelihood, replicate_rng, scan_all, Direction, ScanParams};
use gscan::stdata::StDataset;
use gscan::stgraph::SpatialGraph;
use proptest::prelude::*;

fn grid_data(nx: usize, ny: usize, t: usize, obs: &[u64], exp: &[f64]) -> (SpatialGraph, StDataset) {
    let g = SpatialGraph::grid(nx, ny);
    let d = StDataset::new(
        g.area_ids().to_vec(),
        (1..=t).map(|p| p.to_string()).collect(),
        obs.to_vec(),
        exp.to_vec(),
    )
    .unwrap();
    (g, d)
}

proptest! {
    #[test]
    fn statistic_dominates_single_rate_fit(ot in 1u64..500, frac in 0.0f64..1.0, et in 1.0f64..500.0, share in 0.01f64..0.99) {
        let o = ((ot as f64) * frac).floor() as u64;
        let e = et * share;
        let base = null_log_likelihood(ot, et);
        for d in [Direction::High, Direction::Low] {
            if let Some(v) = log_lrt(o, e, ot, et, d).unwrap() {
                prop_assert!(v - base >= -1e-9 * base.abs().max(1.0));
                let (rin, rout) = (o as f64 / e, (ot - o) as f64 / (et - e));
                let ordered = if d == Direction::High { rin > rout } else { rin < rout };
                prop_assert!(ordered);
            }
        }
    }

    #[test]
    fn multinomial_keeps_total(total in 0u64..2000, exp in prop::collection::vec(0.1f64..20.0, 1..40), seed in any::<u64>()) {
        let counts = multinomial_counts(total, &exp, &mut replicate_rng(seed, 0));
        prop_assert_eq!(counts.len(), exp.len());
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
    }

    #[test]
    fn greedy_windows_are_connected_and_consistent(
        cells in prop::collection::vec((0u64..30, 1.0f64..10.0), 18),
        k in 1usize..9,
        tstar in 0usize..2,
    ) {
        let (obs, exp): (Vec<u64>, Vec<f64>) = cells.into_iter().unzip();
        let (g, d) = grid_data(3, 3, 2, &obs, &exp);
        for w in scan_all(&d, &g, &ScanParams::new(k, tstar)) {
            let o: u64 = w.cells.iter().map(|&c| d.observed_at(c)).sum();
            let e: f64 = w.cells.iter().map(|&c| d.expected_at(c)).sum();
            prop_assert_eq!(o, w.obs_in);
            prop_assert!((e - w.exp_in).abs() <= 1e-9 * e);
            let mut seen = std::collections::BTreeSet::new();
            for (i, c) in w.cells.iter().enumerate() {
                prop_assert!(seen.insert(*c));
                if i > 0 {
                    let linked = w.cells[..i].iter().any(|p| {
                        (p.period == c.period && g.are_adjacent(p.area, c.area))
                            || (p.area == c.area && p.period.abs_diff(c.period) == 1)
                    });
                    prop_assert!(linked);
                }
            }
        }
    }

    #[test]
    fn detected_clusters_are_disjoint_and_significant(cells in prop::collection::vec((0u64..40, 1.0f64..10.0), 32), seed in any::<u64>()) {
        let (obs, exp): (Vec<u64>, Vec<f64>) = cells.into_iter().unzip();
        let (g, d) = grid_data(4, 4, 2, &obs, &exp);
        let set = detect(&d, &g, &ScanParams::new(6, 1).replicates(19).alpha(0.1).seed(seed));
        let mut taken = std::collections::BTreeSet::new();
        for (i, c) in set.clusters.iter().enumerate() {
            prop_assert!(c.p_value <= 0.1);
            if i > 0 {
                prop_assert!(set.clusters[i - 1].window.log_lrt >= c.window.log_lrt);
            }
            for cell in &c.window.cells {
                prop_assert!(taken.insert(*cell));
            }
        }
    }

    #[test]
    fn interval_score_at_least_length(lo in -5.0f64..5.0, width in 0.0f64..5.0, truth in -10.0f64..10.0) {
        let hi = lo + width;
        let s = interval_score(lo, hi, truth);
        prop_assert!(s >= hi - lo);
        prop_assert_eq!(s == hi - lo, (lo..=hi).contains(&truth));
    }

    #[test]
    fn estimation_metrics_ignore_simulation_order(
        rows in prop::collection::vec(prop::collection::vec((-2.0f64..2.0, 0.0f64..1.0, -2.0f64..2.0), 4), 1..6),
    ) {
        let estimates: Vec<Vec<CellEstimate>> = rows
            .iter()
            .map(|r| r.iter().map(|&(m, w, _)| CellEstimate { median: m, lo: m - w, hi: m + w }).collect())
            .collect();
        let truths: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.2).collect()).collect();
        let labels = vec![None; 4];
        let a = estimation_metrics(&estimates, &truths, &labels, CellFilter::All).unwrap();
        let (mut er, mut tr) = (estimates.clone(), truths.clone());
        er.reverse();
        tr.reverse();
        let b = estimation_metrics(&er, &tr, &labels, CellFilter::All).unwrap();
        prop_assert!((a.mab - b.mab).abs() <= 1e-12);
        prop_assert!((a.mrmse - b.mrmse).abs() <= 1e-12);
        prop_assert!((a.is05 - b.is05).abs() <= 1e-12);
        prop_assert!(a.mab <= a.mrmse + 1e-15);
    }
}
