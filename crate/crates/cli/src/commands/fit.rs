use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use gscan::gmrf::InteractionType;
use gscan::report::ClusterReport;
use gscan::riskmodel::{
    build_model, fit, fit_mode, write_risk_csv, FitReport, Hyper, HyperOptimum, ModeFit, ModelSpec, Posterior, RiskModel, Tail,
};

use super::{io_err, load_inputs, out_dir, seed, to_value, workers};
use crate::geojson::{write_annotated, AreaProperties};
use crate::manifest::Recorder;
use crate::{CliError, CommonArgs, FitArgs};

fn parse_theta(s: &str) -> Result<[f64; 4], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::input(format!("--hyper expects four numbers, got `{s}`")))?;
    <[f64; 4]>::try_from(v).map_err(|_| CliError::input(format!("--hyper expects four numbers, got `{s}`")))
}

fn estimate(model: &RiskModel, theta: Option<[f64; 4]>) -> gscan::Result<(ModeFit, Option<HyperOptimum>)> {
    match theta {
        Some(t) => {
            let h = Hyper::from_theta(&t);
            h.check()?;
            Ok((fit_mode(model, &h)?, None))
        }
        None => {
            let f = fit(model)?;
            Ok((f.mode, Some(f.hyper)))
        }
    }
}

pub fn run(common: &CommonArgs, args: &FitArgs) -> Result<(), CliError> {
    let (seed, source) = seed(common);
    let out = out_dir(common)?;
    let kind: InteractionType = args.interaction.as_deref().unwrap_or("4").parse().map_err(CliError::input)?;
    let samples = args.samples.unwrap_or(1000);
    if samples < 100 {
        return Err(CliError::input(format!("--samples must be at least 100, got {samples}")));
    }
    let theta = args.hyper.as_deref().map(parse_theta).transpose()?;
    let mut rec = Recorder::new(
        "fit",
        Some(seed),
        source,
        workers(common),
        json!({
            "interaction": kind.number(),
            "clusters": args.clusters.as_ref().map(|p| p.display().to_string()),
            "samples": samples,
            "hyper": theta,
            "restarts": args.restarts,
        }),
    );
    let (data, graph) = load_inputs(common, &mut rec)?;
    let mut spec = ModelSpec::new(kind).seed(seed);
    if let Some(r) = args.restarts {
        spec.optimizer.restarts = r.max(1);
    }
    if let Some(path) = &args.clusters {
        rec.input(path)?;
        spec = spec.with_terms(ClusterReport::read_json(path)?.terms(&data)?);
    }
    let model = build_model(&data, &graph, &spec)?;
    let (mode, hyper) = match estimate(&model, theta) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => {
            let path = out.join("fit_diagnostics.json");
            let diag = json!({ "error": e.to_string(), "detail": format!("{e:?}") });
            std::fs::write(&path, serde_json::to_string_pretty(&diag).unwrap_or_default() + "\n").map_err(|err| io_err(&path, err))?;
            rec.output(&path);
            rec.finish(&out)?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let posterior = Posterior::new(&model, &mode, samples, seed);
    let criteria = posterior.criteria(&model);
    let report = FitReport::new(&model, &mode, hyper.as_ref(), criteria);
    let report_path = out.join("fit_report.json");
    let text = serde_json::to_string_pretty(&to_value(&report)).map_err(|e| io_err(&report_path, e))?;
    std::fs::write(&report_path, text + "\n").map_err(|e| io_err(&report_path, e))?;
    rec.output(&report_path);
    let risk_path = out.join("risk.csv");
    write_risk_csv(&risk_path, &model, &posterior)?;
    rec.output(&risk_path);

    if let Some(src) = &common.geojson {
        rec.input(src)?;
        let summary = posterior.risk_summary();
        let above = posterior.exceedance(1.0, Tail::Above);
        let n = data.n_areas();
        let mut props: AreaProperties = BTreeMap::new();
        for (i, id) in data.area_ids().iter().enumerate() {
            let mut m = Map::new();
            for (t, p) in data.period_labels().iter().enumerate() {
                let k = t * n + i;
                m.insert(format!("median_risk_{p}"), Value::from(summary[k].median));
                m.insert(format!("p_exceed_above_1_{p}"), Value::from(above[k]));
            }
            props.insert(id.clone(), m);
        }
        let dst = out.join("risk.geojson");
        write_annotated(src, common.geojson_id.as_deref().unwrap_or("area_id"), &props, &dst)?;
        rec.output(&dst);
    }
    rec.finish(&out)?;
    Ok(())
}
