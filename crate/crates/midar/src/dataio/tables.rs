// Dropout tables and height models.

use std::path::Path;

use midar_core::baselines::DropoutTable;
use midar_core::height::HeightModel;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, DataError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BucketRecord {
    upper: f64,
    p_fn: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    buckets: Vec<BucketRecord>,
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a dropout table. `.csv` files have an `upper,p_fn` header; anything
/// else is read as JSON `{"buckets": [{"upper": .., "p_fn": ..}, ..]}`.
pub fn load_table(path: &Path) -> Result<DropoutTable, DataError> {
    let buckets: Vec<BucketRecord> = if is_csv(path) {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        reader
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| csv_error(path, e))?
    } else {
        read_json::<TableRecord>(path)?.buckets
    };
    DropoutTable::new(buckets.iter().map(|b| (b.upper, b.p_fn)).collect()).map_err(|e| DataError::invalid(path, e))
}

fn records(table: &DropoutTable) -> Vec<BucketRecord> {
    table
        .buckets()
        .iter()
        .map(|&(upper, p_fn)| BucketRecord { upper, p_fn })
        .collect()
}

pub fn save_table_json(path: &Path, table: &DropoutTable) -> Result<(), DataError> {
    write_json(
        path,
        &TableRecord {
            buckets: records(table),
        },
    )
}

pub fn save_table_csv(path: &Path, table: &DropoutTable) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records(table) {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Deserialize)]
struct SampleRecord {
    length: f64,
    width: f64,
    height: f64,
}

/// `(length, width, height)` rows from a CSV with those column names.
pub fn load_height_samples(path: &Path) -> Result<Vec<(f64, f64, f64)>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize::<SampleRecord>()
        .map(|r| r.map(|s| (s.length, s.width, s.height)).map_err(|e| csv_error(path, e)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeightRecord {
    a: f64,
    b: f64,
    c: f64,
}

pub fn save_height_model(path: &Path, model: &HeightModel) -> Result<(), DataError> {
    write_json(
        path,
        &HeightRecord {
            a: model.a,
            b: model.b,
            c: model.c,
        },
    )
}

pub fn load_height_model(path: &Path) -> Result<HeightModel, DataError> {
    let r: HeightRecord = read_json(path)?;
    if !(r.a.is_finite() && r.b.is_finite() && r.c.is_finite()) {
        return Err(DataError::invalid(path, "height coefficients must be finite"));
    }
    Ok(HeightModel { a: r.a, b: r.b, c: r.c })
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        _ => DataError::parse(path, line, message),
    }
}
