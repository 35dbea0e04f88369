//! Space-time count data: observed and expected cases on an area × period lattice.
//!
//! Cells are linearized period-major: `index = period * n_areas + area`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One area at one period, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StCell {
    pub area: usize,
    pub period: usize,
}

impl StCell {
    pub fn new(area: usize, period: usize) -> Self {
        Self { area, period }
    }

    pub fn index(self, n_areas: usize) -> usize {
        self.period * n_areas + self.area
    }

    pub fn from_index(index: usize, n_areas: usize) -> Self {
        Self {
            area: index % n_areas,
            period: index / n_areas,
        }
    }
}

/// Input layouts accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountsFormat {
    /// `area_id,period,observed,expected`, one row per cell.
    Long,
    /// `area_id,observed_<p>...,expected_<p>...`, one row per area.
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StDataset {
    n_areas: usize,
    n_periods: usize,
    observed: Vec<u64>,
    expected: Vec<f64>,
    area_ids: Vec<String>,
    period_labels: Vec<String>,
}

impl StDataset {
    /// Builds a validated dataset from period-major cell vectors.
    pub fn new(
        area_ids: Vec<String>,
        period_labels: Vec<String>,
        observed: Vec<u64>,
        expected: Vec<f64>,
    ) -> Result<Self> {
        let n_areas = area_ids.len();
        let n_periods = period_labels.len();
        if n_areas == 0 || n_periods == 0 {
            return Err(Error::DegenerateInput("dataset needs at least one area and one period".into()));
        }
        let n = n_areas * n_periods;
        if observed.len() != n || expected.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n_areas} areas x {n_periods} periods needs {n} cells, got {} observed and {} expected",
                observed.len(),
                expected.len()
            )));
        }
        for (k, &e) in expected.iter().enumerate() {
            if !(e > 0.0) || !e.is_finite() {
                let c = StCell::from_index(k, n_areas);
                return Err(Error::NonPositiveExpected {
                    area: area_ids[c.area].clone(),
                    period: period_labels[c.period].clone(),
                    value: e,
                });
            }
        }
        Ok(Self {
            n_areas,
            n_periods,
            observed,
            expected,
            area_ids,
            period_labels,
        })
    }

    /// Dataset with generated ids `a0..` and periods `1..=T`.
    pub fn from_counts(n_areas: usize, n_periods: usize, observed: Vec<u64>, expected: Vec<f64>) -> Result<Self> {
        Self::new(
            (0..n_areas).map(|i| format!("a{i}")).collect(),
            (1..=n_periods).map(|t| t.to_string()).collect(),
            observed,
            expected,
        )
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_cells(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn observed_at(&self, cell: StCell) -> u64 {
        self.observed[cell.index(self.n_areas)]
    }

    pub fn expected_at(&self, cell: StCell) -> f64 {
        self.expected[cell.index(self.n_areas)]
    }

    pub fn cell(&self, index: usize) -> StCell {
        StCell::from_index(index, self.n_areas)
    }

    pub fn cells(&self) -> impl Iterator<Item = StCell> + '_ {
        (0..self.n_cells()).map(|k| StCell::from_index(k, self.n_areas))
    }

    pub fn total_observed(&self) -> u64 {
        self.observed.iter().sum()
    }

    pub fn total_expected(&self) -> f64 {
        self.expected.iter().sum()
    }

    pub fn area_index(&self, id: &str) -> Option<usize> {
        self.area_ids.iter().position(|a| a == id)
    }

    /// Same lattice and expected counts, new observations.
    pub fn with_observed(&self, observed: Vec<u64>) -> Result<Self> {
        if observed.len() != self.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "replacement observations have {} cells, dataset has {}",
                observed.len(),
                self.n_cells()
            )));
        }
        Ok(Self {
            observed,
            ..self.clone()
        })
    }

    /// Writes the long CSV layout, cells in canonical (period-major) order.
    pub fn write_long_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["area_id", "period", "observed", "expected"])?;
        for c in self.cells() {
            w.write_record([
                self.area_ids[c.area].as_str(),
                self.period_labels[c.period].as_str(),
                &self.observed_at(c).to_string(),
                &format_f64(self.expected_at(c)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Sorts period labels numerically when they all parse as integers, lexicographically otherwise.
pub(crate) fn sort_periods(labels: &mut [String]) {
    if labels.iter().all(|l| l.trim().parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.trim().parse::<i64>().unwrap_or(0));
    } else {
        labels.sort();
    }
}

/// Reads an area ordering file: one area id per line, blank lines ignored.
pub fn read_area_order(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(path, format!("area `{id}` listed twice in order file")));
        }
        out.push(id.to_string());
    }
    Ok(out)
}

/// Loads and validates a counts file. Areas are sorted by id unless `area_order` is given.
pub fn load_dataset(
    counts_path: impl AsRef<Path>,
    format: CountsFormat,
    area_order: Option<&[String]>,
) -> Result<StDataset> {
    let path = counts_path.as_ref();
    let rows = match format {
        CountsFormat::Long => read_long_rows(path)?,
        CountsFormat::Wide => read_wide_rows(path)?,
    };
    assemble(path, rows, area_order)
}

struct Row {
    area: String,
    period: String,
    observed: u64,
    expected: f64,
}

fn read_long_rows(path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, format!("missing column `{name}`")))
    };
    let (ia, ip, io, ie) = (col("area_id")?, col("period")?, col("observed")?, col("expected")?);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let observed = parse_count(field(io)).map_err(|m| Error::parse(path, format!("row {}: {m}", line + 2)))?;
        let expected: f64 = field(ie)
            .parse()
            .map_err(|_| Error::parse(path, format!("row {}: bad expected `{}`", line + 2, field(ie))))?;
        rows.push(Row {
            area: field(ia).to_string(),
            period: field(ip).to_string(),
            observed,
            expected,
        });
    }
    Ok(rows)
}

fn read_wide_rows(path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let ia = headers
        .iter()
        .position(|h| h == "area_id")
        .ok_or_else(|| Error::parse(path, "missing column `area_id`"))?;
    let mut obs_cols = BTreeMap::new();
    let mut exp_cols = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(p) = h.strip_prefix("observed_") {
            obs_cols.insert(p.to_string(), i);
        } else if let Some(p) = h.strip_prefix("expected_") {
            exp_cols.insert(p.to_string(), i);
        }
    }
    if obs_cols.is_empty() {
        return Err(Error::parse(path, "no `observed_<period>` columns"));
    }
    for p in obs_cols.keys().chain(exp_cols.keys()) {
        if !obs_cols.contains_key(p) || !exp_cols.contains_key(p) {
            return Err(Error::parse(path, format!("period `{p}` lacks its observed/expected pair")));
        }
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let area = record.get(ia).unwrap_or("").to_string();
        for (p, &oi) in &obs_cols {
            let observed = parse_count(record.get(oi).unwrap_or(""))
                .map_err(|m| Error::parse(path, format!("row {}: {m}", line + 2)))?;
            let raw = record.get(exp_cols[p]).unwrap_or("");
            let expected: f64 = raw
                .parse()
                .map_err(|_| Error::parse(path, format!("row {}: bad expected `{raw}`", line + 2)))?;
            rows.push(Row {
                area: area.clone(),
                period: p.clone(),
                observed,
                expected,
            });
        }
    }
    Ok(rows)
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    // Integral floats such as `12.0` are common in exported tables.
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 => Ok(v as u64),
        _ => Err(format!("bad observed count `{s}`")),
    }
}

fn assemble(path: &Path, rows: Vec<Row>, area_order: Option<&[String]>) -> Result<StDataset> {
    let mut area_set = BTreeSet::new();
    let mut period_set = BTreeSet::new();
    for r in &rows {
        area_set.insert(r.area.clone());
        period_set.insert(r.period.clone());
    }
    let area_ids: Vec<String> = match area_order {
        Some(order) => {
            for a in &area_set {
                if !order.contains(a) {
                    return Err(Error::UnknownArea(a.clone()));
                }
            }
            order.to_vec()
        }
        None => area_set.into_iter().collect(),
    };
    let mut period_labels: Vec<String> = period_set.into_iter().collect();
    sort_periods(&mut period_labels);
    if area_ids.is_empty() || period_labels.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    let area_pos: HashMap<&str, usize> = area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let period_pos: HashMap<&str, usize> = period_labels.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();

    let n_areas = area_ids.len();
    let n = n_areas * period_labels.len();
    let mut observed = vec![0u64; n];
    let mut expected = vec![0.0f64; n];
    let mut filled = vec![false; n];
    for r in rows {
        let c = StCell::new(area_pos[r.area.as_str()], period_pos[r.period.as_str()]);
        let k = c.index(n_areas);
        if filled[k] {
            return Err(Error::DuplicateCell {
                area: r.area,
                period: r.period,
            });
        }
        if !(r.expected > 0.0) || !r.expected.is_finite() {
            return Err(Error::NonPositiveExpected {
                area: r.area,
                period: r.period,
                value: r.expected,
            });
        }
        filled[k] = true;
        observed[k] = r.observed;
        expected[k] = r.expected;
    }
    if let Some(k) = filled.iter().position(|f| !f) {
        let c = StCell::from_index(k, n_areas);
        return Err(Error::MissingCell {
            area: area_ids[c.area].clone(),
            period: period_labels[c.period].clone(),
        });
    }
    StDataset::new(area_ids, period_labels, observed, expected)
}

/// Expected counts by proportional allocation of the total observed cases to population.
pub fn expected_crude(population: &[f64], observed: &[u64]) -> Result<Vec<f64>> {
    if population.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} population cells vs {} observed cells",
            population.len(),
            observed.len()
        )));
    }
    if let Some(p) = population.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::DegenerateInput(format!("population must be positive, got {p}")));
    }
    let total_pop: f64 = population.iter().sum();
    if !(total_pop > 0.0) {
        return Err(Error::DegenerateInput("zero total population".into()));
    }
    let total_obs: u64 = observed.iter().sum();
    let rate = total_obs as f64 / total_pop;
    Ok(population.iter().map(|p| p * rate).collect())
}

/// Cases and population of one stratum (e.g. an age-sex group), per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub cases: Vec<u64>,
    pub population: Vec<f64>,
}

/// Internally standardized expected counts: `E = Σ_s r_s · pop_s` with global stratum rates `r_s`.
pub fn expected_stratified(strata: &[Stratum]) -> Result<Vec<f64>> {
    let first = strata
        .first()
        .ok_or_else(|| Error::DegenerateInput("no strata given".into()))?;
    let n = first.population.len();
    let mut expected = vec![0.0; n];
    for (s, stratum) in strata.iter().enumerate() {
        if stratum.population.len() != n || stratum.cases.len() != n {
            return Err(Error::DimensionMismatch(format!("stratum {s} has inconsistent cell count")));
        }
        if stratum.population.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::DegenerateInput(format!("stratum {s} has a negative population")));
        }
        let pop: f64 = stratum.population.iter().sum();
        if !(pop > 0.0) {
            return Err(Error::DegenerateInput(format!("stratum {s} has zero global population")));
        }
        let rate = stratum.cases.iter().sum::<u64>() as f64 / pop;
        for (e, p) in expected.iter_mut().zip(&stratum.population) {
            *e += rate * p;
        }
    }
    Ok(expected)
}

/// Writes the area ordering file read by [`read_area_order`].
pub fn write_area_order(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let mut f = File::create(path)?;
    for id in ids {
        writeln!(f, "{id}")?;
    }
    Ok(())
}
