// Trajectory CSV ingestion (NGSIM, highD, simulator dumps) and conversion
// into one frame per (timestep, AV) pair.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use midar_core::geometry::{wrap_angle, VehicleClass};
use midar_core::height::HeightModel;
use midar_core::{Dims, EgoState, OrientedBox, Pose2, SceneFrame};
use serde::{Deserialize, Serialize};

use super::tables::csv_error;
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

/// Maps CSV column names onto trajectory fields.
///
/// `unit_scale` multiplies positions and sizes (0.3048 for feet). Without a
/// `heading` column each vehicle's heading follows its own displacement
/// between consecutive rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub frame: String,
    pub vehicle: String,
    pub x: String,
    pub y: String,
    pub length: String,
    pub width: String,
    pub heading: Option<String>,
    pub height: Option<String>,
    pub lane: Option<String>,
    pub class: Option<String>,
    /// Raw class values to class names, e.g. `{"3": "truck"}`.
    pub class_map: BTreeMap<String, String>,
    pub unit_scale: f64,
    pub heading_unit: AngleUnit,
    pub delimiter: char,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            frame: "frame_id".into(),
            vehicle: "vehicle_id".into(),
            x: "x".into(),
            y: "y".into(),
            length: "length".into(),
            width: "width".into(),
            heading: Some("heading".into()),
            height: None,
            lane: None,
            class: None,
            class_map: BTreeMap::new(),
            unit_scale: 1.0,
            heading_unit: AngleUnit::Radians,
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub frame_id: String,
    pub vehicle_id: String,
    pub class: VehicleClass,
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    /// Radians.
    pub heading: f64,
    pub height: Option<f64>,
    pub lane_index: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub scene_id: String,
    /// LiDAR mount height above the ground.
    pub sensor_height: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            scene_id: "trajectory".into(),
            sensor_height: 1.84,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub frames: usize,
    /// `(frame, AV)` pairs dropped because the AV has no row in that frame.
    pub skipped_pairs: usize,
    pub filled_heights: usize,
}

struct Columns {
    frame: usize,
    vehicle: usize,
    x: usize,
    y: usize,
    length: usize,
    width: usize,
    heading: Option<usize>,
    height: Option<usize>,
    lane: Option<usize>,
    class: Option<usize>,
}

pub fn load_trajectory_csv(path: &Path, mapping: &ColumnMapping) -> Result<Vec<TrajectoryRow>, DataError> {
    if !(mapping.unit_scale.is_finite() && mapping.unit_scale > 0.0) {
        return Err(DataError::invalid(path, "unit_scale must be positive"));
    }
    let delimiter = u8::try_from(mapping.delimiter).map_err(|_| DataError::invalid(path, "delimiter must be ASCII"))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::invalid(path, format!("missing column {name:?}")))
    };
    let find_opt = |name: &Option<String>| name.as_deref().map(find).transpose();
    let cols = Columns {
        frame: find(&mapping.frame)?,
        vehicle: find(&mapping.vehicle)?,
        x: find(&mapping.x)?,
        y: find(&mapping.y)?,
        length: find(&mapping.length)?,
        width: find(&mapping.width)?,
        heading: find_opt(&mapping.heading)?,
        height: find_opt(&mapping.height)?,
        lane: find_opt(&mapping.lane)?,
        class: find_opt(&mapping.class)?,
    };

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = parse_row(&record, &cols, mapping).map_err(|m| DataError::parse(path, line, m))?;
        if !seen.insert((row.frame_id.clone(), row.vehicle_id.clone())) {
            return Err(DataError::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: format!("{}/{}", row.frame_id, row.vehicle_id),
            });
        }
        rows.push(row);
    }
    if cols.heading.is_none() {
        infer_headings(&mut rows);
    }
    Ok(rows)
}

fn parse_row(record: &csv::StringRecord, cols: &Columns, mapping: &ColumnMapping) -> Result<TrajectoryRow, String> {
    let text = |i: usize| record.get(i).unwrap_or("");
    let number = |i: usize| -> Result<f64, String> {
        let s = text(i);
        let v: f64 = s.parse().map_err(|_| format!("column {} is not a number: {s:?}", i + 1))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("column {} is not finite", i + 1))
        }
    };
    let scale = mapping.unit_scale;
    let length = number(cols.length)? * scale;
    let width = number(cols.width)? * scale;
    if length <= 0.0 || width <= 0.0 {
        return Err(format!("non-positive dimensions {length} x {width}"));
    }
    let height = match cols.height.map(text) {
        None | Some("") => None,
        Some(_) => {
            let h = number(cols.height.unwrap())? * scale;
            if h <= 0.0 {
                return Err(format!("non-positive height {h}"));
            }
            Some(h)
        }
    };
    let heading = match cols.heading {
        Some(i) => match mapping.heading_unit {
            AngleUnit::Radians => number(i)?,
            AngleUnit::Degrees => number(i)?.to_radians(),
        },
        None => 0.0,
    };
    let lane_index = match cols.lane.map(text) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<i64>().map_err(|_| format!("lane is not an integer: {s:?}"))?),
    };
    let class = match cols.class.map(text) {
        None => VehicleClass::Car,
        Some(raw) => {
            let name = mapping.class_map.get(raw).map(String::as_str).unwrap_or(raw);
            name.parse().map_err(|e: midar_core::geometry::GeometryError| e.to_string())?
        }
    };
    let frame_id = text(cols.frame).to_string();
    let vehicle_id = text(cols.vehicle).to_string();
    if frame_id.is_empty() || vehicle_id.is_empty() {
        return Err("empty frame or vehicle id".into());
    }
    Ok(TrajectoryRow {
        frame_id,
        vehicle_id,
        class,
        x: number(cols.x)? * scale,
        y: number(cols.y)? * scale,
        length,
        width,
        heading,
        height,
        lane_index,
    })
}

// Rows are in file order; each vehicle's rows are taken in that order.
fn infer_headings(rows: &mut [TrajectoryRow]) {
    let mut tracks: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        tracks.entry(r.vehicle_id.clone()).or_default().push(i);
    }
    for track in tracks.values() {
        let mut last = 0.0;
        for (k, &i) in track.iter().enumerate() {
            let (from, to) = if k + 1 < track.len() {
                (i, track[k + 1])
            } else if k > 0 {
                (track[k - 1], i)
            } else {
                (i, i)
            };
            let dx = rows[to].x - rows[from].x;
            let dy = rows[to].y - rows[from].y;
            if dx != 0.0 || dy != 0.0 {
                last = dy.atan2(dx);
            }
            rows[i].heading = last;
        }
    }
}

/// One frame per timestep and AV present in it, in order of first
/// appearance of each timestep. Missing heights come from `height`.
pub fn trajectory_to_frames(
    rows: &[TrajectoryRow],
    av_ids: &BTreeSet<String>,
    sensor: &SensorConfig,
    height: &HeightModel,
) -> (Vec<SceneFrame>, IngestReport) {
    let mut order: Vec<&str> = Vec::new();
    let mut by_frame: HashMap<&str, Vec<&TrajectoryRow>> = HashMap::new();
    for r in rows {
        by_frame
            .entry(r.frame_id.as_str())
            .or_insert_with(|| {
                order.push(r.frame_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut report = IngestReport::default();
    let mut frames = Vec::new();
    for frame_id in order {
        let members = &by_frame[frame_id];
        let boxes: Vec<OrientedBox> = members
            .iter()
            .map(|r| {
                let mut b = OrientedBox {
                    id: r.vehicle_id.as_str().into(),
                    class: r.class,
                    cx: r.x,
                    cy: r.y,
                    cz: 0.0,
                    width: r.width,
                    length: r.length,
                    height: 0.0,
                    yaw: wrap_angle(r.heading),
                };
                match r.height {
                    Some(h) => {
                        b.height = h;
                        b.cz = 0.5 * h;
                    }
                    None => {
                        height.fill(&mut b);
                        report.filled_heights += 1;
                    }
                }
                b
            })
            .collect();
        for av in av_ids {
            let Some(k) = boxes.iter().position(|b| b.id.as_str() == av) else {
                report.skipped_pairs += 1;
                continue;
            };
            let own = &boxes[k];
            let mut ego = EgoState::new(av.as_str(), Pose2::new(own.cx, own.cy, own.yaw));
            ego.z_offset = sensor.sensor_height;
            ego.dims = Dims {
                width: own.width,
                length: own.length,
                height: own.height,
            };
            let others = boxes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, b)| b.clone())
                .collect();
            frames.push(SceneFrame::new(sensor.scene_id.as_str(), frame_id, ego, others));
        }
    }
    report.frames = frames.len();
    (frames, report)
}
