//! File formats: newline-delimited JSON records, parameter files, dropout
//! tables, trajectory CSV ingestion and height samples.

mod params;
mod records;
mod tables;
mod trajectory;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use params::{load_params, params_from_json, params_to_json, save_params, ParamsError};
pub use records::{
    join_labels, label_records, outcome_record, read_frames, read_labels, read_outcomes, read_predictions, write_frames,
    write_outcomes, BoxRecord, DimsRecord, EgoRecord, FeatureRecord, FrameRecord, GraphNodeRecord, GraphRecord, LabelKey,
    LabelRecord, OutcomeRecord, PredFrame, PredFrameRecord, PredRecord, WireLabel,
};
pub use tables::{load_height_model, load_height_samples, load_table, save_height_model, save_table_csv, save_table_json};
pub use trajectory::{
    load_trajectory_csv, trajectory_to_frames, AngleUnit, ColumnMapping, IngestReport, SensorConfig, TrajectoryRow,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate key {key}")]
    DuplicateKey { path: PathBuf, line: usize, key: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Params {
        path: PathBuf,
        #[source]
        source: ParamsError,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl ToString) -> Self {
        DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }

    pub(crate) fn invalid(path: &Path, message: impl ToString) -> Self {
        DataError::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

/// Reads one JSON record per non-blank line. Each record comes back with
/// its 1-based line number.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::parse(path, i + 1, e))?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn write_ndjson<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| DataError::invalid(path, e))?;
        w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| DataError::invalid(path, e))?;
    w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::parse(path, e.line(), e))
}
