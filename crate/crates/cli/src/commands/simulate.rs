use serde_json::json;

use gscan::par::with_workers;
use gscan::simulate::{batch, snake_and_block, RingAnalog, Scenario, ScenarioSpec, Subscenario};
use gscan::stgraph::SpatialGraph;

use super::{io_err, load_data, out_dir, seed, workers};
use crate::manifest::Recorder;
use crate::{CliError, CommonArgs, Layout, SimulateArgs};

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::input(format!("--grid expects NXxNY, got `{s}`"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn run(common: &CommonArgs, args: &SimulateArgs) -> Result<(), CliError> {
    let (seed, source) = seed(common);
    let out = out_dir(common)?;
    let scenario: Scenario = args.scenario.as_deref().unwrap_or("A").parse().map_err(CliError::input)?;
    let subscenario: Subscenario = match (&args.subscenario, scenario) {
        (Some(s), _) => s.parse().map_err(CliError::input)?,
        (None, Scenario::B) => Subscenario::None,
        (None, Scenario::C) => Subscenario::HighLow,
        (None, Scenario::A) => Subscenario::OneHigh,
    };
    let n = args.n.unwrap_or(1);
    let layout = args.layout.unwrap_or(if args.grid.is_some() || common.data.is_some() { Layout::Grid } else { Layout::Ring });
    let mut params = json!({
        "scenario": format!("{scenario:?}"),
        "subscenario": subscenario.to_string(),
        "n": n,
        "layout": layout,
    });
    let mut rec;
    let (graph, expected, spec): (SpatialGraph, Vec<f64>, ScenarioSpec) = match layout {
        Layout::Ring => {
            if common.data.is_some() || args.grid.is_some() {
                return Err(CliError::input("--data and --grid apply to --layout grid only"));
            }
            let r = RingAnalog::new();
            if args.periods.is_some_and(|p| p != r.n_periods) {
                return Err(CliError::input(format!("the ring layout has {} periods", r.n_periods)));
            }
            rec = Recorder::new("simulate", Some(seed), source, workers(common), params);
            let e = r.expected_for(subscenario);
            let spec = r.spec(scenario, subscenario, seed);
            (r.graph, e, spec)
        }
        Layout::Grid => {
            let (nx, ny) = parse_grid(args.grid.as_deref().unwrap_or("10x10"))?;
            let graph = SpatialGraph::grid(nx, ny);
            let (t, e) = match &common.data {
                Some(path) => {
                    params["data"] = json!(path.display().to_string());
                    rec = Recorder::new("simulate", Some(seed), source, workers(common), params.clone());
                    let d = load_data(path, common, Some(graph.area_ids()), &mut rec)?;
                    graph.check_matches(&d)?;
                    (d.n_periods(), d.expected().to_vec())
                }
                None => {
                    let t = args.periods.unwrap_or(4);
                    let e = args.expected.unwrap_or(5.0);
                    if !(e > 0.0) || t == 0 {
                        return Err(CliError::input("--expected must be positive and --periods at least 1"));
                    }
                    params["grid"] = json!([nx, ny]);
                    params["periods"] = json!(t);
                    params["expected"] = json!(e);
                    rec = Recorder::new("simulate", Some(seed), source, workers(common), params.clone());
                    (t, vec![e; nx * ny * t])
                }
            };
            let geometry = snake_and_block(nx, ny, t)?;
            let spec = ScenarioSpec::preset(scenario, subscenario, &geometry, seed);
            (graph, e, spec)
        }
    };
    let sims = with_workers(workers(common), || batch(&spec, &graph, &expected, n))?;
    let root = out.join("sims");
    for (k, s) in sims.iter().enumerate() {
        let dir = root.join(k.to_string());
        s.write_dir(&dir)?;
        rec.output(&dir.join("data.csv"));
        rec.output(&dir.join("truth.csv"));
    }
    let adj = out.join("adjacency.csv");
    let cen = out.join("centroids.csv");
    graph.write_adjacency_csv(&adj)?;
    graph.write_centroids_csv(&cen)?;
    let spec_path = out.join("scenario.json");
    let text = serde_json::to_string_pretty(&spec).map_err(|e| io_err(&spec_path, e))?;
    std::fs::write(&spec_path, text + "\n").map_err(|e| io_err(&spec_path, e))?;
    for p in [adj, cen, spec_path] {
        rec.output(&p);
    }
    rec.finish(&out)?;
    Ok(())
}
