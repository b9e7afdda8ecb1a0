// Newline-delimited record schemas and their readers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use midar_core::geometry::VehicleClass;
use midar_core::labeling::PredBox;
use midar_core::rmlos::{propagation_matrix, RmlosGraph};
use midar_core::{DetectionLabel, DetectionOutcome, Dims, EgoState, LabeledFrame, OrientedBox, Pose2, SceneFrame};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{read_ndjson, write_ndjson, DataError};

/// Accepts ids written as JSON strings or integers.
fn flexible_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Unsigned(u64),
        Signed(i64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Unsigned(n) => n.to_string(),
        Raw::Signed(n) => n.to_string(),
    })
}

fn flexible_id_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    struct Wrap(#[serde(deserialize_with = "flexible_id")] String);
    Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
}

/// A label on the wire: written as 0 (TP) or 1 (FN); `"TP"` and `"FN"` are
/// also accepted on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireLabel(pub DetectionLabel);

impl Serialize for WireLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0.as_index() as u8)
    }
}

impl<'de> Deserialize<'de> for WireLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        let label = match Raw::deserialize(d)? {
            Raw::Num(0) => DetectionLabel::TruePositive,
            Raw::Num(1) => DetectionLabel::FalseNegative,
            Raw::Text(t) if t == "TP" => DetectionLabel::TruePositive,
            Raw::Text(t) if t == "FN" => DetectionLabel::FalseNegative,
            _ => return Err(serde::de::Error::custom("label must be 0, 1, \"TP\" or \"FN\"")),
        };
        Ok(WireLabel(label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsRecord {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    #[serde(default = "default_ego_id", deserialize_with = "flexible_id")]
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default)]
    pub z_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsRecord>,
}

fn default_ego_id() -> String {
    "ego".into()
}

/// A box in the frame's coordinate system. `z` is the center height above
/// the ground and defaults to `h / 2`; `h` may be 0 when unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    #[serde(deserialize_with = "flexible_id")]
    pub id: String,
    #[serde(default = "default_class")]
    pub class: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub w: f64,
    pub l: f64,
    #[serde(default)]
    pub h: f64,
    pub heading: f64,
}

fn default_class() -> String {
    "car".into()
}

impl BoxRecord {
    pub fn to_box(&self) -> Result<OrientedBox, String> {
        let class: VehicleClass = self.class.parse().map_err(|e: midar_core::geometry::GeometryError| e.to_string())?;
        let cz = self.z.unwrap_or(0.5 * self.h);
        OrientedBox::new(self.id.as_str(), class, [self.x, self.y, cz], self.w, self.l, self.h, self.heading)
            .map_err(|e| e.to_string())
    }

    pub fn from_box(b: &OrientedBox) -> Self {
        BoxRecord {
            id: b.id.to_string(),
            class: b.class.as_str().into(),
            x: b.cx,
            y: b.cy,
            z: Some(b.cz),
            w: b.width,
            l: b.length,
            h: b.height,
            heading: b.yaw,
        }
    }
}

/// One line of a frames file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    #[serde(deserialize_with = "flexible_id")]
    pub scene_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub frame_id: String,
    #[serde(default)]
    pub timestamp: f64,
    pub ego: EgoRecord,
    #[serde(default)]
    pub vehicles: Vec<BoxRecord>,
}

impl FrameRecord {
    pub fn to_frame(&self) -> Result<SceneFrame, String> {
        let mut ego = EgoState::new(self.ego.id.as_str(), Pose2::new(self.ego.x, self.ego.y, self.ego.heading));
        ego.z_offset = self.ego.z_offset;
        if let Some(d) = &self.ego.dims {
            ego.dims = Dims {
                width: d.width,
                length: d.length,
                height: d.height,
            };
        }
        for (what, v) in [("x", self.ego.x), ("y", self.ego.y), ("heading", self.ego.heading), ("z_offset", ego.z_offset)] {
            if !v.is_finite() {
                return Err(format!("ego {what} is not finite"));
            }
        }
        let vehicles = self.vehicles.iter().map(BoxRecord::to_box).collect::<Result<Vec<_>, _>>()?;
        let mut frame = SceneFrame::new(self.scene_id.as_str(), self.frame_id.as_str(), ego, vehicles);
        frame.timestamp = self.timestamp;
        frame.validate().map_err(|e| e.to_string())?;
        Ok(frame)
    }

    pub fn from_frame(f: &SceneFrame) -> Self {
        FrameRecord {
            scene_id: f.scene_id.clone(),
            frame_id: f.frame_id.clone(),
            timestamp: f.timestamp,
            ego: EgoRecord {
                id: f.ego.id.to_string(),
                x: f.ego.pose.x,
                y: f.ego.pose.y,
                heading: f.ego.pose.heading,
                z_offset: f.ego.z_offset,
                dims: Some(DimsRecord {
                    width: f.ego.dims.width,
                    length: f.ego.dims.length,
                    height: f.ego.dims.height,
                }),
            },
            vehicles: f.vehicles.iter().map(BoxRecord::from_box).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRecord {
    #[serde(flatten)]
    pub bbox: BoxRecord,
    pub score: f64,
}

/// One line of a detector-predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredFrameRecord {
    #[serde(deserialize_with = "flexible_id")]
    pub scene_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub frame_id: String,
    #[serde(default)]
    pub boxes: Vec<PredRecord>,
}

/// `(scene_id, frame_id, av_id, vehicle_id)`; `av_id` is only needed when
/// several AVs share a frame.
pub type LabelKey = (String, String, Option<String>, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    #[serde(deserialize_with = "flexible_id")]
    pub scene_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "flexible_id_opt")]
    pub av_id: Option<String>,
    #[serde(deserialize_with = "flexible_id")]
    pub vehicle_id: String,
    pub label: WireLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    #[serde(deserialize_with = "flexible_id")]
    pub scene_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub frame_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub av_id: String,
    #[serde(deserialize_with = "flexible_id")]
    pub vehicle_id: String,
    pub label: WireLabel,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

pub fn outcome_record(o: &DetectionOutcome) -> OutcomeRecord {
    OutcomeRecord {
        scene_id: o.scene_id.clone(),
        frame_id: o.frame_id.clone(),
        av_id: o.av_id.to_string(),
        vehicle_id: o.vehicle_id.to_string(),
        label: WireLabel(o.label),
        score: o.score,
        distance: Some(o.distance),
    }
}

impl OutcomeRecord {
    /// Missing distances become NaN.
    pub fn to_outcome(&self) -> DetectionOutcome {
        DetectionOutcome {
            scene_id: self.scene_id.clone(),
            frame_id: self.frame_id.clone(),
            av_id: self.av_id.as_str().into(),
            vehicle_id: self.vehicle_id.as_str().into(),
            label: self.label.0,
            score: self.score,
            distance: self.distance.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub sin_heading: f64,
    pub cos_heading: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNodeRecord {
    pub id: String,
    pub features: FeatureRecord,
}

/// Graph dump for inspection. Node 0 is the ego; edges are node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub scene_id: String,
    pub frame_id: String,
    pub av_id: String,
    pub nodes: Vec<GraphNodeRecord>,
    pub edges: Vec<(String, String)>,
    pub propagation: Vec<Vec<f64>>,
}

impl GraphRecord {
    pub fn new(frame: &SceneFrame, graph: &RmlosGraph) -> Self {
        let a = propagation_matrix(graph);
        GraphRecord {
            scene_id: frame.scene_id.clone(),
            frame_id: frame.frame_id.clone(),
            av_id: frame.ego.id.to_string(),
            nodes: graph
                .nodes
                .iter()
                .map(|n| {
                    let f = n.features;
                    GraphNodeRecord {
                        id: n.id.to_string(),
                        features: FeatureRecord {
                            x: f.x,
                            y: f.y,
                            z: f.z,
                            width: f.width,
                            length: f.length,
                            height: f.height,
                            sin_heading: f.sin_heading,
                            cos_heading: f.cos_heading,
                            distance: f.distance,
                        },
                    }
                })
                .collect(),
            edges: graph
                .edges
                .iter()
                .map(|&(u, v)| (graph.nodes[u].id.to_string(), graph.nodes[v].id.to_string()))
                .collect(),
            propagation: (0..a.rows()).map(|i| a.row(i).to_vec()).collect(),
        }
    }
}

fn key_text(parts: &[&str]) -> String {
    parts.join("/")
}

/// Reads a frames file. Rejects repeated `(scene, frame, ego)` records and
/// repeated vehicle ids inside a frame.
pub fn read_frames(path: &Path) -> Result<Vec<SceneFrame>, DataError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_ndjson::<FrameRecord>(path)? {
        let key = (rec.scene_id.clone(), rec.frame_id.clone(), rec.ego.id.clone());
        if !seen.insert(key) {
            return Err(DataError::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: key_text(&[&rec.scene_id, &rec.frame_id, &rec.ego.id]),
            });
        }
        let mut ids = BTreeSet::new();
        for v in &rec.vehicles {
            if !ids.insert(v.id.as_str()) {
                return Err(DataError::DuplicateKey {
                    path: path.to_path_buf(),
                    line,
                    key: key_text(&[&rec.scene_id, &rec.frame_id, &v.id]),
                });
            }
        }
        out.push(rec.to_frame().map_err(|m| DataError::parse(path, line, m))?);
    }
    Ok(out)
}

pub fn write_frames(path: &Path, frames: &[SceneFrame]) -> Result<(), DataError> {
    let records: Vec<FrameRecord> = frames.iter().map(FrameRecord::from_frame).collect();
    write_ndjson(path, &records)
}

/// Predictions grouped per `(scene, frame)`, in file order.
pub type PredFrame = (String, String, Vec<PredBox>);

pub fn read_predictions(path: &Path) -> Result<Vec<PredFrame>, DataError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_ndjson::<PredFrameRecord>(path)? {
        if !seen.insert((rec.scene_id.clone(), rec.frame_id.clone())) {
            return Err(DataError::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: key_text(&[&rec.scene_id, &rec.frame_id]),
            });
        }
        let mut ids = BTreeSet::new();
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for p in &rec.boxes {
            if !ids.insert(p.bbox.id.as_str()) {
                return Err(DataError::DuplicateKey {
                    path: path.to_path_buf(),
                    line,
                    key: key_text(&[&rec.scene_id, &rec.frame_id, &p.bbox.id]),
                });
            }
            let b = p.bbox.to_box().map_err(|m| DataError::parse(path, line, m))?;
            boxes.push(PredBox::new(b, p.score).map_err(|e| DataError::parse(path, line, e))?);
        }
        out.push((rec.scene_id, rec.frame_id, boxes));
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<LabelKey, DetectionLabel>, DataError> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_ndjson::<LabelRecord>(path)? {
        let key = (rec.scene_id, rec.frame_id, rec.av_id, rec.vehicle_id);
        if out.contains_key(&key) {
            let mut parts = vec![key.0.as_str(), key.1.as_str()];
            if let Some(av) = &key.2 {
                parts.push(av);
            }
            parts.push(&key.3);
            return Err(DataError::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: key_text(&parts),
            });
        }
        out.insert(key, rec.label.0);
    }
    Ok(out)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<DetectionOutcome>, DataError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_ndjson::<OutcomeRecord>(path)? {
        let key = (rec.scene_id.clone(), rec.frame_id.clone(), rec.av_id.clone(), rec.vehicle_id.clone());
        if !seen.insert(key) {
            return Err(DataError::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: key_text(&[&rec.scene_id, &rec.frame_id, &rec.av_id, &rec.vehicle_id]),
            });
        }
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(DataError::parse(path, line, format!("score {} outside [0, 1]", rec.score)));
        }
        out.push(rec.to_outcome());
    }
    Ok(out)
}

pub fn write_outcomes(path: &Path, outcomes: &[DetectionOutcome]) -> Result<(), DataError> {
    let records: Vec<OutcomeRecord> = outcomes.iter().map(outcome_record).collect();
    write_ndjson(path, &records)
}

/// Attaches labels to frames. A label with an `av_id` applies only to the
/// frame of that ego; one without applies to every ego of the frame.
pub fn join_labels(frames: Vec<SceneFrame>, labels: &BTreeMap<LabelKey, DetectionLabel>) -> Vec<LabeledFrame> {
    frames
        .into_iter()
        .map(|frame| {
            let mut map = BTreeMap::new();
            for v in &frame.vehicles {
                let specific = (
                    frame.scene_id.clone(),
                    frame.frame_id.clone(),
                    Some(frame.ego.id.to_string()),
                    v.id.to_string(),
                );
                let label = labels.get(&specific).or_else(|| {
                    let shared = (specific.0.clone(), specific.1.clone(), None, specific.3.clone());
                    labels.get(&shared)
                });
                if let Some(&l) = label {
                    map.insert(v.id.clone(), l);
                }
            }
            LabeledFrame { frame, labels: map }
        })
        .collect()
}

/// Label records for every labeled vehicle, keyed with the ego id.
pub fn label_records(frames: &[LabeledFrame]) -> Vec<LabelRecord> {
    frames
        .iter()
        .flat_map(|f| {
            f.labels.iter().map(move |(id, &l)| LabelRecord {
                scene_id: f.frame.scene_id.clone(),
                frame_id: f.frame.frame_id.clone(),
                av_id: Some(f.frame.ego.id.to_string()),
                vehicle_id: id.to_string(),
                label: WireLabel(l),
            })
        })
        .collect()
}
