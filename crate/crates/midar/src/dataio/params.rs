// Model parameter files: JSON with an embedded schema version, row-major
// tensors and the feature normalization statistics.

use std::collections::BTreeMap;
use std::path::Path;

use midar_core::model::{expected_shape, Hyper, ModelParams, Weights, SCHEMA_VERSION, TENSOR_NAMES};
use midar_core::rmlos::{FeatureStats, FEATURE_DIM};
use midar_core::Matrix;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("malformed parameter file: {0}")]
    Malformed(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("tensor {name}: shape {found:?} does not match {expected:?} for hidden size {hidden_dim}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
        hidden_dim: usize,
    },
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperRecord {
    k: usize,
    alpha: f64,
    hidden_dim: usize,
    dropout: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsRecord {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: (usize, usize),
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    schema_version: u64,
    hyper: HyperRecord,
    stats: StatsRecord,
    tensors: BTreeMap<String, TensorRecord>,
}

pub fn params_to_json(params: &ModelParams) -> String {
    let h = params.hyper;
    let file = ParamsFile {
        schema_version: u64::from(params.schema_version),
        hyper: HyperRecord {
            k: h.k,
            alpha: h.alpha,
            hidden_dim: h.hidden_dim,
            dropout: h.dropout,
        },
        stats: StatsRecord {
            mean: params.stats.mean.to_vec(),
            std: params.stats.std.to_vec(),
        },
        tensors: TENSOR_NAMES
            .into_iter()
            .zip(params.weights.tensors())
            .map(|(name, t)| {
                (
                    name.to_string(),
                    TensorRecord {
                        shape: t.shape(),
                        data: t.as_slice().to_vec(),
                    },
                )
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("parameter records always serialize")
}

pub fn params_from_json(text: &str) -> Result<ModelParams, ParamsError> {
    // The version is checked before the body so that a future layout is
    // reported as a version problem rather than a parse failure.
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ParamsError::Malformed(e.to_string()))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(ParamsError::Version {
                found: v,
                expected: SCHEMA_VERSION,
            })
        }
        None => return Err(ParamsError::Malformed("missing integer schema_version".into())),
    }
    let file: ParamsFile = serde_json::from_value(value).map_err(|e| ParamsError::Malformed(e.to_string()))?;

    let hyper = Hyper {
        k: file.hyper.k,
        alpha: file.hyper.alpha,
        hidden_dim: file.hyper.hidden_dim,
        dropout: file.hyper.dropout,
    };
    hyper.validate().map_err(|e| ParamsError::Invalid(e.to_string()))?;
    let stats = stats_from(&file.stats)?;

    let d = hyper.hidden_dim;
    let mut tensors = file.tensors;
    if let Some(extra) = tensors.keys().find(|k| !TENSOR_NAMES.contains(&k.as_str())) {
        return Err(ParamsError::Malformed(format!("unknown tensor {extra:?}")));
    }
    let mut weights = Weights::zeros(d);
    for (name, slot) in TENSOR_NAMES.into_iter().zip(weights.tensors_mut()) {
        let t = tensors
            .remove(name)
            .ok_or_else(|| ParamsError::Malformed(format!("missing tensor {name:?}")))?;
        let expected = expected_shape(name, d);
        if t.shape != expected {
            return Err(ParamsError::Shape {
                name: name.into(),
                expected,
                found: t.shape,
                hidden_dim: d,
            });
        }
        if t.data.len() != expected.0 * expected.1 {
            return Err(ParamsError::Malformed(format!(
                "tensor {name:?} has {} values for shape {:?}",
                t.data.len(),
                t.shape
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(ParamsError::Invalid(format!("tensor {name:?} has non-finite values")));
        }
        *slot = Matrix::from_vec(expected.0, expected.1, t.data).expect("length checked");
    }
    ModelParams::new(weights, hyper, stats).map_err(|e| ParamsError::Invalid(e.to_string()))
}

fn stats_from(s: &StatsRecord) -> Result<FeatureStats, ParamsError> {
    if s.mean.len() != FEATURE_DIM || s.std.len() != FEATURE_DIM {
        return Err(ParamsError::Malformed(format!(
            "stats need {FEATURE_DIM} means and stds, got {} and {}",
            s.mean.len(),
            s.std.len()
        )));
    }
    if s.mean.iter().any(|v| !v.is_finite()) || s.std.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(ParamsError::Invalid("stats must be finite with positive std".into()));
    }
    let mut stats = FeatureStats::identity();
    stats.mean.copy_from_slice(&s.mean);
    stats.std.copy_from_slice(&s.std);
    Ok(stats)
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<(), DataError> {
    let mut text = params_to_json(params);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    params_from_json(&text).map_err(|source| DataError::Params {
        path: path.to_path_buf(),
        source,
    })
}
