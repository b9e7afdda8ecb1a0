//! Line-oriented request/response service for simulator integration.
//!
//! Each input line is one JSON request:
//!
//! ```json
//! {"request_id": 7, "model": "dropout", "preset": "trajectory", "seed": 3, "frame": {...}}
//! ```
//!
//! `model` is `"midar"`, `"perfect"` or `"dropout"` and falls back to the
//! service default; `preset`, `seed` and `threshold` are optional overrides.
//! `frame` uses the frames-file schema. Exactly one response line is
//! written per non-blank request line, in order:
//!
//! ```json
//! {"request_id": 7, "outcomes": [{"vehicle_id": "v3", "label": 0, "score": 1.0}]}
//! {"request_id": 8, "error": {"kind": "unknown_model", "message": "..."}}
//! ```
//!
//! Labels are 0 for a detected vehicle and 1 for a missed one. The
//! `request_id` is echoed verbatim; it is `null` when the line is not JSON.

use std::io::{self, BufRead, Write};
use std::str::FromStr;

use midar_core::baselines::{perfect_detection, random_dropout, DropoutTable};
use midar_core::model::{forward, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{FrameRecord, WireLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Midar,
    Perfect,
    Dropout,
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "midar" => Ok(ModelChoice::Midar),
            "perfect" => Ok(ModelChoice::Perfect),
            "dropout" => Ok(ModelChoice::Dropout),
            other => Err(format!("unknown model {other:?} (expected midar, perfect or dropout)")),
        }
    }
}

/// Settings used when a request does not override them.
#[derive(Debug, Clone)]
pub struct ServeDefaults {
    pub model: ModelChoice,
    pub table: DropoutTable,
    pub seed: u64,
    pub threshold: f64,
    pub half_extent: f64,
}

impl Default for ServeDefaults {
    fn default() -> Self {
        ServeDefaults {
            model: ModelChoice::Midar,
            table: DropoutTable::signal_control(),
            seed: 0,
            threshold: midar_core::DEFAULT_THRESHOLD,
            half_extent: midar_core::DEFAULT_HALF_EXTENT,
        }
    }
}

#[derive(Deserialize)]
struct Request {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    threshold: Option<f64>,
    frame: FrameRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireOutcome {
    pub vehicle_id: String,
    pub label: WireLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Outcomes { request_id: Value, outcomes: Vec<WireOutcome> },
    Error { request_id: Value, error: WireError },
}

impl Response {
    pub fn request_id(&self) -> &Value {
        match self {
            Response::Outcomes { request_id, .. } | Response::Error { request_id, .. } => request_id,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: usize,
    pub errors: usize,
}

fn fail(kind: &str, message: impl ToString) -> WireError {
    WireError {
        kind: kind.into(),
        message: message.to_string(),
    }
}

/// Answers one request line. Never panics on bad input.
pub fn handle_line(line: &str, params: Option<&ModelParams>, defaults: &ServeDefaults) -> Response {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return Response::Error {
                request_id: Value::Null,
                error: fail("malformed", e),
            }
        }
    };
    let request_id = value.get("request_id").cloned().unwrap_or(Value::Null);
    match answer(value, params, defaults) {
        Ok(outcomes) => Response::Outcomes { request_id, outcomes },
        Err(error) => Response::Error { request_id, error },
    }
}

fn answer(value: Value, params: Option<&ModelParams>, defaults: &ServeDefaults) -> Result<Vec<WireOutcome>, WireError> {
    let req: Request = serde_json::from_value(value).map_err(|e| fail("malformed", e))?;
    let model = match &req.model {
        Some(m) => m.parse().map_err(|e| fail("unknown_model", e))?,
        None => defaults.model,
    };
    let frame = req.frame.to_frame().map_err(|e| fail("invalid_frame", e))?;
    let half_extent = defaults.half_extent;
    match model {
        ModelChoice::Midar => {
            let params = params.ok_or_else(|| fail("missing_params", "the service was started without --params"))?;
            let threshold = req.threshold.unwrap_or(defaults.threshold);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(fail("invalid_request", format!("threshold {threshold} outside [0, 1]")));
            }
            let preds = forward(&frame, params, half_extent).map_err(|e| fail("numeric", e))?;
            if let Some(p) = preds.iter().find(|p| !p.p_fn.is_finite()) {
                return Err(fail("numeric", format!("non-finite probability for {}", p.vehicle_id)));
            }
            Ok(preds
                .into_iter()
                .map(|p| WireOutcome {
                    label: WireLabel(p.label(threshold)),
                    vehicle_id: p.vehicle_id.0,
                    score: p.p_fn,
                })
                .collect())
        }
        ModelChoice::Perfect => Ok(to_wire(perfect_detection(&frame, half_extent))),
        ModelChoice::Dropout => {
            let table = match &req.preset {
                Some(name) => DropoutTable::preset(name).map_err(|e| fail("unknown_preset", e))?,
                None => defaults.table.clone(),
            };
            let seed = req.seed.unwrap_or(defaults.seed);
            Ok(to_wire(random_dropout(&frame, &table, seed, half_extent)))
        }
    }
}

fn to_wire(outcomes: Vec<midar_core::DetectionOutcome>) -> Vec<WireOutcome> {
    outcomes
        .into_iter()
        .map(|o| WireOutcome {
            vehicle_id: o.vehicle_id.0,
            label: WireLabel(o.label),
            score: o.score,
        })
        .collect()
}

/// Serves requests until end of input. Each response is flushed before the
/// next line is read so lockstep clients never stall.
pub fn serve_loop<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    params: Option<&ModelParams>,
    defaults: &ServeDefaults,
) -> io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    for line in input.lines() {
        let line = match line {
            Ok(l) => l,
            // Undecodable bytes are answered like any other malformed line.
            Err(e) if e.kind() == io::ErrorKind::InvalidData => String::from("\u{0}"),
            Err(e) => return Err(e),
        };
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(&line, params, defaults);
        stats.requests += 1;
        if matches!(response, Response::Error { .. }) {
            stats.errors += 1;
            log::warn!("request {}: error response", response.request_id());
        }
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(stats)
}
