use std::path::Path;

use serde::de::DeserializeOwned;

use crate::{CliError, CommonArgs};

pub(crate) trait Merge: Sized {
    const KEYS: &'static [&'static str];
    fn merge(self, file: Self) -> Self;
}

/// Reads a TOML option file, normalising `-` in keys to `_`.
pub fn load_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(table.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect())
}

fn parse_section<T: DeserializeOwned>(table: &toml::Table, path: &Path) -> Result<T, CliError> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Merges flags over the optional config file.
pub(crate) fn resolve<A>(common: CommonArgs, args: A) -> Result<(CommonArgs, A), CliError>
where
    A: Merge + DeserializeOwned,
{
    let Some(path) = common.config.clone() else {
        return Ok((common, args));
    };
    let mut table = load_config(&path)?;
    // `K` is the flag spelling of `k`
    if let Some(v) = table.remove("K") {
        table.insert("k".into(), v);
    }
    for key in table.keys() {
        if key == "config" || !(CommonArgs::KEYS.contains(&key.as_str()) || A::KEYS.contains(&key.as_str())) {
            return Err(CliError::input(format!("{}: unknown option `{key}`", path.display())));
        }
    }
    let file_common: CommonArgs = parse_section(&table, &path)?;
    let file_args: A = parse_section(&table, &path)?;
    Ok((common.merge(file_common), args.merge(file_args)))
}
