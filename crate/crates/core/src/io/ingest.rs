//! Tabular areal data: one row per high-resolution unit.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};

/// One high-resolution unit with its parent and observed density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArealRecord {
    pub unit_id: String,
    pub parent_id: String,
    /// Events per year.
    pub count: Option<f64>,
    /// km².
    pub area: Option<f64>,
    pub density: f64,
}

impl ArealRecord {
    pub fn from_count(unit_id: String, parent_id: String, count: f64, area: f64) -> Self {
        ArealRecord {
            unit_id,
            parent_id,
            count: Some(count),
            area: Some(area),
            density: count / area,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_number(path: &Path, line: u64, name: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::input(path, format!("line {line}: {name} {raw:?} is not a finite number")))
}

/// Read a CSV with columns `unit_id`, `parent_id` and either `density` or
/// both `count` and `area`.
pub fn read_areal_table(path: &Path) -> Result<Vec<ArealRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::input(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::input(path, e.to_string()))?.clone();
    let need = |name: &str| column(&headers, name).ok_or_else(|| Error::input(path, format!("missing column {name}")));
    let unit = need("unit_id")?;
    let parent = need("parent_id")?;
    let density = column(&headers, "density");
    let count = column(&headers, "count");
    let area = column(&headers, "area");
    enum Source {
        Density(usize),
        CountArea(usize, usize),
    }
    let source = match (density, count, area) {
        (Some(d), None, None) => Source::Density(d),
        (None, Some(c), Some(a)) => Source::CountArea(c, a),
        (Some(_), _, _) => {
            return Err(Error::input(path, "give either density or count and area, not both"));
        }
        (None, Some(_), None) => return Err(Error::input(path, "missing column area")),
        (None, None, Some(_)) => return Err(Error::input(path, "missing column count")),
        (None, None, None) => return Err(Error::input(path, "missing column density (or count and area)")),
    };

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::input(path, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let unit_id = field(unit).to_string();
        let parent_id = field(parent).to_string();
        if unit_id.is_empty() {
            return Err(Error::input(path, format!("line {line}: empty unit_id")));
        }
        if parent_id.is_empty() {
            return Err(Error::input(path, format!("line {line}: unit {unit_id} has no parent_id")));
        }
        if !seen.insert(unit_id.clone()) {
            return Err(Error::input(path, format!("duplicate unit_id {unit_id}")));
        }
        let record = match source {
            Source::Density(d) => ArealRecord {
                density: parse_number(path, line, "density", field(d))?,
                unit_id,
                parent_id,
                count: None,
                area: None,
            },
            Source::CountArea(c, a) => {
                let count = parse_number(path, line, "count", field(c))?;
                let area = parse_number(path, line, "area", field(a))?;
                if area <= 0.0 {
                    return Err(Error::input(path, format!("unit {unit_id} has non-positive area {area}")));
                }
                ArealRecord::from_count(unit_id, parent_id, count, area)
            }
        };
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::input(path, "no rows"));
    }
    Ok(records)
}

/// Units in record order; groups in order of first appearance.
pub fn dataset_from_records(records: &[ArealRecord]) -> Result<TwoLevelDataset> {
    let mut group_index: HashMap<&str, usize> = HashMap::new();
    let mut group_ids = Vec::new();
    let mut group_of = Vec::with_capacity(records.len());
    for r in records {
        let next = group_ids.len();
        let g = *group_index.entry(r.parent_id.as_str()).or_insert_with(|| {
            group_ids.push(r.parent_id.clone());
            next
        });
        group_of.push(g);
    }
    let mut data = TwoLevelDataset::new(
        records.iter().map(|r| r.density).collect(),
        group_of,
        records.iter().map(|r| r.unit_id.clone()).collect(),
        group_ids,
    )?;
    if records.iter().all(|r| r.area.is_some()) {
        data.areas = Some(records.iter().filter_map(|r| r.area).collect());
        data.counts = Some(records.iter().filter_map(|r| r.count).collect());
    }
    Ok(data)
}

/// Read an areal table and optionally z-score the densities.
pub fn ingest_table(path: &Path, standardize: bool) -> Result<TwoLevelDataset> {
    let data = dataset_from_records(&read_areal_table(path)?)?;
    if standardize {
        data.standardized()
    } else {
        Ok(data)
    }
}

/// Write records as `unit_id,parent_id,count,area` when every record has a
/// count and area, otherwise as `unit_id,parent_id,density`.
pub fn write_areal_table(path: &Path, records: &[ArealRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::input(path, e.to_string()))?;
    let with_counts = records.iter().all(|r| r.count.is_some() && r.area.is_some());
    if with_counts {
        w.write_record(["unit_id", "parent_id", "count", "area"])?;
        for r in records {
            let (c, a) = (r.count.unwrap_or_default(), r.area.unwrap_or_default());
            w.write_record([r.unit_id.clone(), r.parent_id.clone(), c.to_string(), a.to_string()])?;
        }
    } else {
        w.write_record(["unit_id", "parent_id", "density"])?;
        for r in records {
            w.write_record([r.unit_id.clone(), r.parent_id.clone(), r.density.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Records for a dataset's original-scale values, as densities.
pub fn records_of(data: &TwoLevelDataset) -> Vec<ArealRecord> {
    let values = data.original_values();
    (0..data.n_customers())
        .map(|c| {
            let unit_id = data.unit_ids()[c].clone();
            let parent_id = data.group_ids()[data.group_of()[c]].clone();
            match (&data.counts, &data.areas) {
                (Some(counts), Some(areas)) => ArealRecord {
                    unit_id,
                    parent_id,
                    count: Some(counts[c]),
                    area: Some(areas[c]),
                    density: values[c],
                },
                _ => ArealRecord {
                    unit_id,
                    parent_id,
                    count: None,
                    area: None,
                    density: values[c],
                },
            }
        })
        .collect()
}
