//! GeoJSON pass-through: copies a feature collection, adding per-area properties.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use crate::CliError;

pub type AreaProperties = BTreeMap<String, Map<String, Value>>;

fn feature_id(feature: &Value, key: &str) -> Option<String> {
    match feature.get("properties")?.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn write_annotated(src: &Path, id_key: &str, props: &AreaProperties, dst: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(src).map_err(|e| CliError::input(format!("{}: {e}", src.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", src.display())))?;
    let features = doc
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| CliError::input(format!("{}: not a feature collection", src.display())))?;
    let mut matched = 0;
    for f in features.iter_mut() {
        let Some(id) = feature_id(f, id_key) else { continue };
        let Some(extra) = props.get(&id) else { continue };
        if let Some(Value::Object(p)) = f.get_mut("properties") {
            p.extend(extra.clone());
            matched += 1;
        }
    }
    if matched < props.len() {
        log::warn!("{} of {} areas have no feature in {}", props.len() - matched, props.len(), src.display());
    }
    let mut out = serde_json::to_string(&doc).map_err(|e| CliError::input(e.to_string()))?;
    out.push('\n');
    std::fs::write(dst, out).map_err(|e| CliError::input(format!("{}: {e}", dst.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adds_properties_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.geojson");
        std::fs::write(
            &src,
            r#"{"type":"FeatureCollection","features":[
                {"type":"Feature","properties":{"area_id":"a"},"geometry":null},
                {"type":"Feature","properties":{"area_id":7},"geometry":null}]}"#,
        )
        .unwrap();
        let mut props = AreaProperties::new();
        props.insert("a".into(), [("x".to_string(), Value::from(1))].into_iter().collect());
        props.insert("7".into(), [("x".to_string(), Value::from(2))].into_iter().collect());
        let dst = dir.path().join("b.geojson");
        write_annotated(&src, "area_id", &props, &dst).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dst).unwrap()).unwrap();
        assert_eq!(v["features"][0]["properties"]["x"], 1);
        assert_eq!(v["features"][1]["properties"]["x"], 2);
    }
}
