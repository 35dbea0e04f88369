use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use gscan::cylinder::{scan_cylindrical, CylinderParams};
use gscan::par::with_workers;
use gscan::report::ClusterReport;
use gscan::scan::{detect, Directions, ScanParams};

use super::{io_err, load_inputs, out_dir, seed, workers};
use crate::geojson::{write_annotated, AreaProperties};
use crate::manifest::Recorder;
use crate::{CliError, CommonArgs, DetectArgs, DirectionsArg, Method};

pub fn run(common: &CommonArgs, args: &DetectArgs) -> Result<(), CliError> {
    let (seed, source) = seed(common);
    let out = out_dir(common)?;
    let method = args.method.unwrap_or(Method::Gscanstat);
    let directions = match args.directions.unwrap_or(DirectionsArg::Both) {
        DirectionsArg::Both => Directions::BOTH,
        DirectionsArg::High => Directions::HIGH,
        DirectionsArg::Low => Directions::LOW,
    };
    let alpha = args.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::input(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let replicates = args.replicates.unwrap_or(999);
    let scan = ScanParams {
        k: args.k.unwrap_or(60),
        t_star: args.tstar.unwrap_or(3),
        n_replicates: replicates,
        alpha,
        seed,
        directions,
    };
    let cyl = CylinderParams {
        max_spatial_fraction: args.max_spatial_fraction.unwrap_or(0.5),
        max_temporal_fraction: args.max_temporal_fraction.unwrap_or(0.9),
        n_replicates: replicates,
        alpha,
        seed,
        directions,
    };
    if scan.k == 0 {
        return Err(CliError::input("--K must be at least 1"));
    }
    let params = match method {
        Method::Gscanstat => json!({ "method": "gscanstat", "scan": scan }),
        Method::Cylinder => json!({ "method": "cylinder", "cylinder": cyl }),
    };
    let mut rec = Recorder::new("detect", Some(seed), source, workers(common), params);
    let (data, graph) = load_inputs(common, &mut rec)?;
    let set = with_workers(workers(common), || match method {
        Method::Gscanstat => detect(&data, &graph, &scan),
        Method::Cylinder => scan_cylindrical(&data, &graph, &cyl),
    });
    log::info!("{} significant clusters", set.clusters.len());
    let report = ClusterReport::new(&set, &data);
    let json_path = out.join("clusters.json");
    report.write_json(&json_path)?;
    rec.output(&json_path);
    let csv_path = out.join("clusters.csv");
    report.write_csv(&csv_path)?;
    rec.output(&csv_path);

    if let Some(src) = &common.geojson {
        rec.input(src)?;
        let mut props: AreaProperties = BTreeMap::new();
        for id in data.area_ids() {
            let mut m = Map::new();
            for p in data.period_labels() {
                m.insert(format!("cluster_{p}"), Value::Null);
                m.insert(format!("direction_{p}"), Value::Null);
            }
            props.insert(id.clone(), m);
        }
        for (j, c) in report.clusters.iter().enumerate() {
            for cell in &c.cells {
                let m = props.get_mut(&cell.area_id).ok_or_else(|| io_err(&json_path, "unknown area"))?;
                m.insert(format!("cluster_{}", cell.period), Value::from(j + 1));
                m.insert(format!("direction_{}", cell.period), Value::from(c.direction.as_str()));
            }
        }
        let dst = out.join("clusters.geojson");
        write_annotated(src, common.geojson_id.as_deref().unwrap_or("area_id"), &props, &dst)?;
        rec.output(&dst);
    }
    rec.finish(&out)?;
    Ok(())
}
