pub mod detect;
pub mod evaluate;
pub mod fit;
pub mod simulate;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gscan::stdata::{load_dataset, read_area_order, CountsFormat, StDataset};
use gscan::stgraph::{build_graph, SpatialGraph};

use crate::manifest::{Recorder, SeedSource};
use crate::{CliError, CommonArgs, Format};

pub(crate) fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::input(format!("missing required option --{flag}")))
}

pub(crate) fn out_dir(common: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = required(&common.out, "out")?.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// The explicit seed, or one drawn from the clock.
pub(crate) fn seed(common: &CommonArgs) -> (u64, SeedSource) {
    match common.seed {
        Some(s) => (s, SeedSource::Flag),
        None => {
            let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
            let s = (nanos as u64) ^ ((nanos >> 64) as u64);
            log::info!("no --seed given; using {s}");
            (s, SeedSource::Generated)
        }
    }
}

pub(crate) fn workers(common: &CommonArgs) -> usize {
    common.workers.unwrap_or(0)
}

pub(crate) fn area_order(common: &CommonArgs, rec: &mut Recorder) -> Result<Option<Vec<String>>, CliError> {
    match &common.area_order {
        Some(p) => {
            rec.input(p)?;
            Ok(Some(read_area_order(p)?))
        }
        None => Ok(None),
    }
}

pub(crate) fn load_data(path: &Path, common: &CommonArgs, order: Option<&[String]>, rec: &mut Recorder) -> Result<StDataset, CliError> {
    rec.input(path)?;
    let format = match common.format.unwrap_or(Format::Long) {
        Format::Long => CountsFormat::Long,
        Format::Wide => CountsFormat::Wide,
    };
    Ok(load_dataset(path, format, order)?)
}

/// Dataset and graph, in the dataset's area order.
pub(crate) fn load_inputs(common: &CommonArgs, rec: &mut Recorder) -> Result<(StDataset, SpatialGraph), CliError> {
    let order = area_order(common, rec)?;
    let data = load_data(required(&common.data, "data")?, common, order.as_deref(), rec)?;
    let graph = load_graph(common, Some(data.area_ids()), rec)?;
    graph.check_matches(&data)?;
    Ok((data, graph))
}

pub(crate) fn load_graph(common: &CommonArgs, order: Option<&[String]>, rec: &mut Recorder) -> Result<SpatialGraph, CliError> {
    let adj = required(&common.graph, "graph")?;
    let cen = required(&common.centroids, "centroids")?;
    rec.input(adj)?;
    rec.input(cen)?;
    Ok(build_graph(adj, cen, order)?)
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

pub(crate) fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}
