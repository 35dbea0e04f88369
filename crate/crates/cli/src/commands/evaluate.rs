use std::path::{Path, PathBuf};

use serde_json::json;

use gscan::metrics::{
    detection_metrics, estimation_metrics, write_detection_table, write_estimation_table, CellEstimate, CellFilter, DetectionSummary,
};
use gscan::report::ClusterReport;
use gscan::scan::Direction;
use gscan::simulate::read_truth_csv;
use gscan::stdata::{load_dataset, CountsFormat, StCell, StDataset};

use super::{io_err, out_dir, required};
use crate::manifest::{Recorder, SeedSource};
use crate::{CliError, CommonArgs, EvaluateArgs};

/// Simulation directories named by their index, in numeric order.
fn sim_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(root).map_err(|e| io_err(root, e))?;
    let mut dirs: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| Some((e.file_name().to_str()?.parse().ok()?, e.path())))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::input(format!("{}: no simulation directories", root.display())));
    }
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

/// Log-scale estimates from a risk CSV.
fn read_risk(path: &Path, data: &StDataset) -> Result<Vec<CellEstimate>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| io_err(path, format!("missing column `{name}`")));
    let (ia, ip, im, il, ih) = (col("area_id")?, col("period")?, col("median_risk")?, col("lo95")?, col("hi95")?);
    let mut out: Vec<Option<CellEstimate>> = vec![None; data.n_cells()];
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let area = data
            .area_index(&rec[ia])
            .ok_or_else(|| io_err(path, format!("area `{}` is not in the lattice", &rec[ia])))?;
        let period = data
            .period_labels()
            .iter()
            .position(|p| *p == rec[ip])
            .ok_or_else(|| io_err(path, format!("period `{}` is not in the lattice", &rec[ip])))?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec[i].parse::<f64>().map_err(|_| io_err(path, format!("bad number `{}`", &rec[i])))
        };
        out[StCell::new(area, period).index(data.n_areas())] = Some(CellEstimate {
            median: num(im)?.ln(),
            lo: num(il)?.ln(),
            hi: num(ih)?.ln(),
        });
    }
    out.into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| io_err(path, "does not cover every cell of the lattice"))
}

struct MethodRuns {
    name: String,
    detections: Vec<gscan::metrics::DetectionReport>,
    estimates: Vec<Vec<CellEstimate>>,
}

pub fn run(common: &CommonArgs, args: &EvaluateArgs) -> Result<(), CliError> {
    let out = out_dir(common)?;
    let root = required(&args.sims, "sims")?;
    let methods: Vec<String> = required(&args.methods, "methods")?
        .split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect();
    if methods.is_empty() {
        return Err(CliError::input("--methods is empty"));
    }
    let scenario = args.scenario.clone().unwrap_or_else(|| {
        let name = root.file_name().and_then(|s| s.to_str()).unwrap_or("sims");
        if name == "sims" {
            root.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()).unwrap_or(name).to_string()
        } else {
            name.to_string()
        }
    });
    let mut rec = Recorder::new(
        "evaluate",
        None,
        SeedSource::None,
        0,
        json!({ "sims": root.display().to_string(), "methods": methods, "scenario": scenario }),
    );
    let dirs = sim_dirs(root)?;
    let mut runs: Vec<MethodRuns> = methods
        .iter()
        .map(|m| MethodRuns { name: m.clone(), detections: Vec::new(), estimates: Vec::new() })
        .collect();
    let mut truths = Vec::new();
    let mut labels: Option<Vec<Option<Direction>>> = None;
    let mut lattice: Option<(Vec<String>, Vec<String>)> = None;
    for dir in &dirs {
        let data_path = dir.join("data.csv");
        let truth_path = dir.join("truth.csv");
        rec.input(&data_path)?;
        rec.input(&truth_path)?;
        let data = load_dataset(&data_path, CountsFormat::Long, None)?;
        let shape = (data.area_ids().to_vec(), data.period_labels().to_vec());
        match &lattice {
            None => lattice = Some(shape),
            Some(l) if *l != shape => {
                return Err(CliError::input(format!("{}: lattice differs from the first simulation", data_path.display())))
            }
            _ => {}
        }
        let truth = read_truth_csv(&truth_path, &data)?;
        let lab = truth.direction_labels();
        match &labels {
            None => labels = Some(lab.clone()),
            Some(l) if *l != lab => {
                return Err(CliError::input(format!("{}: true cluster cells differ between simulations", truth_path.display())))
            }
            _ => {}
        }
        for run in runs.iter_mut() {
            let mdir = dir.join(&run.name);
            if !mdir.is_dir() {
                return Err(CliError::input(format!("missing method directory {}", mdir.display())));
            }
            let clusters = mdir.join("clusters.json");
            if clusters.is_file() {
                rec.input(&clusters)?;
                let set = ClusterReport::read_json(&clusters)?.to_set(&data)?;
                run.detections.push(detection_metrics(&set, &lab, data.n_areas()));
            }
            let risk = mdir.join("risk.csv");
            if risk.is_file() {
                rec.input(&risk)?;
                run.estimates.push(read_risk(&risk, &data)?);
            }
        }
        truths.push(truth.log_risk);
    }
    let labels = labels.unwrap_or_default();
    let mut det_rows = Vec::new();
    let mut est_rows = Vec::new();
    for run in &runs {
        for (kind, n) in [("clusters.json", run.detections.len()), ("risk.csv", run.estimates.len())] {
            if n != 0 && n != dirs.len() {
                return Err(CliError::input(format!("method `{}`: {kind} present in {n} of {} simulations", run.name, dirs.len())));
            }
        }
        if run.detections.is_empty() && run.estimates.is_empty() {
            return Err(CliError::input(format!("method `{}` has neither clusters.json nor risk.csv", run.name)));
        }
        if !run.detections.is_empty() {
            det_rows.push((scenario.clone(), run.name.clone(), DetectionSummary::from_reports(&run.detections)));
        }
        if !run.estimates.is_empty() {
            for f in CellFilter::ALL {
                if let Some(r) = estimation_metrics(&run.estimates, &truths, &labels, f) {
                    est_rows.push((scenario.clone(), run.name.clone(), f, r));
                }
            }
        }
    }
    let det_path = out.join("detection.csv");
    write_detection_table(&det_path, &det_rows)?;
    rec.output(&det_path);
    let est_path = out.join("estimation.csv");
    write_estimation_table(&est_path, &est_rows)?;
    rec.output(&est_path);
    rec.finish(&out)?;
    Ok(())
}
