use std::path::{Path, PathBuf};

use gscan::report::{CellRef, ClusterEntry, ClusterReport};
use gscan::scan::Direction;
use gscan_cli::main_with_args;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("gscan").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Simulates `n` datasets into `dir` and returns the graph file paths.
fn simulate(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["simulate", "--out", s(dir)];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0);
    (dir.join("adjacency.csv"), dir.join("centroids.csv"))
}

fn write_flat(dir: &Path) -> PathBuf {
    let mut text = String::from("area_id,period,observed,expected\n");
    for t in 1..=2 {
        for r in 0..5 {
            for c in 0..5 {
                text += &format!("r{r}c{c},{t},5,5\n");
            }
        }
    }
    let p = dir.join("flat.csv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn flat_data_gives_no_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let g = gscan::stgraph::SpatialGraph::grid(5, 5);
    g.write_adjacency_csv(dir.path().join("adj5.csv")).unwrap();
    g.write_centroids_csv(dir.path().join("cen5.csv")).unwrap();
    let data = write_flat(dir.path());
    let out = dir.path().join("det");
    let code = run(&[
        "detect", "--data", s(&data), "--graph", s(&dir.path().join("adj5.csv")), "--centroids", s(&dir.path().join("cen5.csv")),
        "--seed", "3", "--replicates", "99", "--K", "10", "--tstar", "1", "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    assert_eq!(read_json(&out.join("clusters.json"))["clusters"].as_array().unwrap().len(), 0);
    let m = read_json(&out.join("detect.manifest.json"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 3);
}

#[test]
fn planted_fixture_yields_one_high_cluster_in_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let (adj, cen) = simulate(dir.path(), &["--scenario", "A", "--subscenario", "1H", "--seed", "2024"]);
    let data = dir.path().join("sims/0/data.csv");
    let mut schemas = Vec::new();
    for method in ["gscanstat", "cylinder"] {
        let out = dir.path().join(method);
        let code = run(&[
            "detect", "--method", method, "--data", s(&data), "--graph", s(&adj), "--centroids", s(&cen),
            "--seed", "11", "--replicates", "999", "--alpha", "0.05", "--out", s(&out),
        ]);
        assert_eq!(code, 0);
        let rep = read_json(&out.join("clusters.json"));
        let clusters = rep["clusters"].as_array().unwrap();
        if method == "gscanstat" {
            assert_eq!(clusters.len(), 1);
            assert_eq!(clusters[0]["direction"], "high");
        }
        let mut keys: Vec<String> = clusters[0].as_object().unwrap().keys().cloned().collect();
        keys.sort();
        schemas.push(keys);
        let header = std::fs::read_to_string(out.join("clusters.csv")).unwrap();
        assert!(header.starts_with("cluster,direction,log_lrt,p_value,area_id,period\n"));
    }
    assert_eq!(schemas[0], schemas[1]);
}

#[test]
fn simulate_layouts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    simulate(&b, &["--scenario", "B", "--n", "5", "--seed", "9"]);
    for k in 0..5 {
        let truth = std::fs::read_to_string(b.join(format!("sims/{k}/truth.csv"))).unwrap();
        assert!(truth.lines().skip(1).all(|l| l.ends_with(',')), "sim {k}");
        assert!(b.join(format!("sims/{k}/data.csv")).is_file());
    }
    assert!(!b.join("sims/5").exists());

    let hl = dir.path().join("hl");
    simulate(&hl, &["--scenario", "A", "--subscenario", "1H1L", "--seed", "9"]);
    let truth = std::fs::read_to_string(hl.join("sims/0/truth.csv")).unwrap();
    let mut ids: Vec<&str> = truth.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).filter(|v| !v.is_empty()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids, vec!["1", "2"]);

    let again = dir.path().join("again");
    simulate(&again, &["--scenario", "A", "--subscenario", "1H1L", "--seed", "9"]);
    for f in ["sims/0/data.csv", "sims/0/truth.csv", "adjacency.csv", "centroids.csv", "scenario.json"] {
        assert_eq!(std::fs::read(hl.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn grid_layout_takes_expected_counts_from_data() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    simulate(&first, &["--layout", "grid", "--grid", "6x6", "--periods", "3", "--expected", "7.5", "--seed", "1"]);
    let data = first.join("sims/0/data.csv");
    let second = dir.path().join("second");
    simulate(&second, &["--data", s(&data), "--grid", "6x6", "--seed", "2"]);
    let text = std::fs::read_to_string(second.join("sims/0/data.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",7.5")));
    assert_eq!(text.lines().count(), 1 + 36 * 3);
    // grid too small for the snake
    assert_eq!(run(&["simulate", "--layout", "grid", "--grid", "4x4", "--seed", "1", "--out", s(&dir.path().join("x"))]), 2);
}

/// Small grid study: data, graph and a detection report per simulation.
fn small_study(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let (adj, cen) = simulate(
        dir,
        &["--layout", "grid", "--grid", "6x6", "--periods", "2", "--expected", "20", "--n", &n.to_string(), "--seed", "4"],
    );
    for k in 0..n {
        let sim = dir.join(format!("sims/{k}"));
        let code = run(&[
            "detect", "--data", s(&sim.join("data.csv")), "--graph", s(&adj), "--centroids", s(&cen), "--seed", "1",
            "--replicates", "99", "--K", "12", "--tstar", "1", "--out", s(&sim.join("gscanstat")),
        ]);
        assert_eq!(code, 0);
    }
    (adj, cen)
}

fn fit_args<'a>(data: &'a Path, adj: &'a Path, cen: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec!["fit", "--data", s(data), "--graph", s(adj), "--centroids", s(cen), "--seed", "5", "--samples", "400", "--out", s(out)]
}

#[test]
fn fit_reports_and_cluster_aware_dic() {
    let dir = tempfile::tempdir().unwrap();
    let (adj, cen) = small_study(dir.path(), 1);
    let sim = dir.path().join("sims/0");
    let data = sim.join("data.csv");
    let clusters = sim.join("gscanstat/clusters.json");
    assert!(!read_json(&clusters)["clusters"].as_array().unwrap().is_empty());

    let aware = sim.join("aware");
    let mut a = fit_args(&data, &adj, &cen, &aware);
    a.extend(["--clusters", s(&clusters)]);
    assert_eq!(run(&a), 0);
    let plain = sim.join("plain");
    assert_eq!(run(&fit_args(&data, &adj, &cen, &plain)), 0);
    let ra = read_json(&aware.join("fit_report.json"));
    let rp = read_json(&plain.join("fit_report.json"));
    assert!(ra["criteria"]["dic"].as_f64().unwrap() < rp["criteria"]["dic"].as_f64().unwrap());
    assert_eq!(ra["n_clusters"].as_u64().unwrap() as usize, read_json(&clusters)["clusters"].as_array().unwrap().len());
    let risk = std::fs::read_to_string(aware.join("risk.csv")).unwrap();
    assert!(risk.starts_with("area_id,period,median_risk,lo95,hi95,p_exceed_above_1,p_exceed_below_1\n"));
    assert_eq!(risk.lines().count(), 1 + 72);
    assert!(aware.join("fit.manifest.json").is_file());
}

#[test]
fn fit_every_interaction_type_and_intercept_only() {
    let dir = tempfile::tempdir().unwrap();
    let (adj, cen) = simulate(dir.path(), &["--layout", "grid", "--grid", "6x6", "--periods", "2", "--expected", "8", "--seed", "3"]);
    let data = dir.path().join("sims/0/data.csv");
    for kind in ["1", "2", "3", "4"] {
        let out = dir.path().join(format!("fit{kind}"));
        let mut a = fit_args(&data, &adj, &cen, &out);
        a.extend(["--interaction", kind]);
        assert_eq!(run(&a), 0, "type {kind}");
        let r = read_json(&out.join("fit_report.json"));
        assert_eq!(r["interaction"].as_str().unwrap(), ["I", "II", "III", "IV"][kind.parse::<usize>().unwrap() - 1]);
    }
    let out = dir.path().join("stiff");
    let mut a = fit_args(&data, &adj, &cen, &out);
    a.extend(["--hyper", "14,0,14,14"]);
    assert_eq!(run(&a), 0);
    let r = read_json(&out.join("fit_report.json"));
    let d = gscan::stdata::load_dataset(&data, gscan::stdata::CountsFormat::Long, None).unwrap();
    let want = (d.total_observed() as f64 / d.total_expected()).ln();
    assert!((r["alpha"].as_f64().unwrap() - want).abs() < 1e-3);
    assert!(r["criteria"]["dic"].as_f64().unwrap().is_finite());
    assert!(r["log_marginal"].is_null());
}

fn truth_report(sim: &Path) -> ClusterReport {
    let text = std::fs::read_to_string(sim.join("truth.csv")).unwrap();
    let mut cells: Vec<(usize, CellRef, f64)> = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if !f[3].is_empty() {
            cells.push((f[3].parse().unwrap(), CellRef { area_id: f[0].into(), period: f[1].into() }, f[2].parse().unwrap()));
        }
    }
    let ids: std::collections::BTreeSet<usize> = cells.iter().map(|c| c.0).collect();
    ClusterReport {
        clusters: ids
            .into_iter()
            .map(|id| {
                let mine: Vec<&(usize, CellRef, f64)> = cells.iter().filter(|c| c.0 == id).collect();
                ClusterEntry {
                    direction: if mine[0].2 > 0.0 { Direction::High } else { Direction::Low },
                    log_lrt: 1.0,
                    p_value: 0.001,
                    cells: mine.iter().map(|c| c.1.clone()).collect(),
                    obs_in: 0,
                    exp_in: 1.0,
                }
            })
            .collect(),
    }
}

#[test]
fn evaluate_perfect_detection_and_missing_method() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--scenario", "A", "--subscenario", "1H1L", "--seed", "8"]);
    let sim = dir.path().join("sims/0");
    std::fs::create_dir_all(sim.join("oracle")).unwrap();
    truth_report(&sim).write_json(sim.join("oracle/clusters.json")).unwrap();
    let out = dir.path().join("eval");
    assert_eq!(run(&["evaluate", "--sims", s(&dir.path().join("sims")), "--methods", "oracle", "--out", s(&out)]), 0);
    let table = std::fs::read_to_string(out.join("detection.csv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..], &["oracle", "1", "1.0000", "1.0000", "2.00", "0.00"]);
    assert_eq!(
        run(&["evaluate", "--sims", s(&dir.path().join("sims")), "--methods", "oracle,cylinder", "--out", s(&out)]),
        2
    );
}

#[test]
fn evaluate_pipeline_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let n = 20;
    let (adj, cen) = small_study(dir.path(), n);
    for k in 0..n {
        let sim = dir.path().join(format!("sims/{k}"));
        let out = sim.join("gscanstat");
        let data = sim.join("data.csv");
        let mut a = fit_args(&data, &adj, &cen, &out);
        let clusters = out.join("clusters.json");
        a.extend(["--clusters", s(&clusters), "--interaction", "1"]);
        assert_eq!(run(&a), 0);
    }
    let out = dir.path().join("eval");
    assert_eq!(
        run(&["evaluate", "--sims", s(&dir.path().join("sims")), "--methods", "gscanstat", "--scenario", "A_1H", "--out", s(&out)]),
        0
    );
    let det = std::fs::read_to_string(out.join("detection.csv")).unwrap();
    assert_eq!(det.lines().next().unwrap(), "scenario,method,n_sims,recall,precision,n_detected,n_spurious");
    assert!(det.lines().nth(1).unwrap().starts_with("A_1H,gscanstat,20,"));
    let est = std::fs::read_to_string(out.join("estimation.csv")).unwrap();
    let lines: Vec<&str> = est.lines().collect();
    assert_eq!(lines[0], "scenario,method,cells,n_cells,mab,mrmse,mean_length,coverage95,is05");
    let strata: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(strata, vec!["all", "in_high", "outside"]);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').skip(4).map(|x| x.parse().unwrap()).collect();
        assert!(v[0] <= v[1] + 1e-12, "MAB above MRMSE in {l}");
        assert!((0.0..=1.0).contains(&v[3]));
    }
}

#[test]
fn evaluate_rejects_mismatched_lattices() {
    let dir = tempfile::tempdir().unwrap();
    simulate(&dir.path().join("a"), &["--layout", "grid", "--grid", "6x6", "--periods", "2", "--seed", "1"]);
    simulate(&dir.path().join("b"), &["--layout", "grid", "--grid", "7x6", "--periods", "2", "--seed", "1"]);
    let sims = dir.path().join("mixed");
    std::fs::create_dir_all(&sims).unwrap();
    std::fs::rename(dir.path().join("a/sims/0"), sims.join("0")).unwrap();
    std::fs::rename(dir.path().join("b/sims/0"), sims.join("1")).unwrap();
    for k in 0..2 {
        std::fs::create_dir_all(sims.join(format!("{k}/m"))).unwrap();
        std::fs::write(sims.join(format!("{k}/m/clusters.json")), "{\"clusters\":[]}").unwrap();
    }
    assert_eq!(run(&["evaluate", "--sims", s(&sims), "--methods", "m", "--out", s(&dir.path().join("e"))]), 2);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "scenario = \"B\"\nn = 2\nseed = 4\nlayout = \"grid\"\ngrid = \"6x6\"\nperiods = 2\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--n", "3", "--out", s(&out)]), 0);
    assert!(out.join("sims/2/data.csv").is_file());
    assert!(!out.join("sims/3").exists());
    let m = read_json(&out.join("simulate.manifest.json"));
    assert_eq!(m["seed"], 4);
    assert_eq!(m["parameters"]["n"], 3);

    std::fs::write(&cfg, "replicate = 9\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]), 2);
}

#[test]
fn generated_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["simulate", "--layout", "grid", "--grid", "6x6", "--periods", "2", "--out", s(&out)]), 0);
    let m = read_json(&out.join("simulate.manifest.json"));
    assert_eq!(m["seed_source"], "generated");
    let seed = m["seed"].as_u64().unwrap().to_string();
    let again = dir.path().join("again");
    assert_eq!(run(&["simulate", "--layout", "grid", "--grid", "6x6", "--periods", "2", "--seed", &seed, "--out", s(&again)]), 0);
    assert_eq!(std::fs::read(out.join("sims/0/data.csv")).unwrap(), std::fs::read(again.join("sims/0/data.csv")).unwrap());
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["detect", "--data", "missing.csv", "--graph", "a.csv", "--centroids", "b.csv", "--out", s(&out)]), 2);
    assert_eq!(run(&["detect", "--out", s(&out)]), 2);
    assert_eq!(run(&["simulate", "--scenario", "Z", "--out", s(&out)]), 2);
    assert_eq!(run(&["fit", "--interaction", "7", "--out", s(&out)]), 2);
    assert_eq!(run(&["nonsense"]), 2);
}

#[test]
fn geojson_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let (adj, cen) = simulate(dir.path(), &["--scenario", "A", "--subscenario", "1H", "--seed", "2024"]);
    let features: Vec<String> = (0..100)
        .map(|a| format!(r#"{{"type":"Feature","properties":{{"area_id":"r{}c{}"}},"geometry":null}}"#, a / 10, a % 10))
        .collect();
    let gj = dir.path().join("areas.geojson");
    std::fs::write(&gj, format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))).unwrap();
    let out = dir.path().join("det");
    let code = run(&[
        "detect", "--data", s(&dir.path().join("sims/0/data.csv")), "--graph", s(&adj), "--centroids", s(&cen), "--seed", "1",
        "--replicates", "99", "--geojson", s(&gj), "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let v = read_json(&out.join("clusters.geojson"));
    let f = v["features"].as_array().unwrap();
    assert_eq!(f.len(), 100);
    let flagged = f.iter().filter(|x| x["properties"]["direction_2"] == "high").count();
    assert!(flagged > 0);
}
