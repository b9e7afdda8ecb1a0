//! Frames, ego state, labels and detection outcomes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geometry::{GeometryError, OrientedBox, Pose2, VehicleId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("frame {scene_id}/{frame_id}: duplicate vehicle id {id}")]
    DuplicateVehicle {
        scene_id: String,
        frame_id: String,
        id: VehicleId,
    },
    #[error("frame {scene_id}/{frame_id}: ego id {id} also listed as a surrounding vehicle")]
    EgoListed {
        scene_id: String,
        frame_id: String,
        id: VehicleId,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Vehicle size in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl Dims {
    /// Car-sized fallback used when the ego's own size is unknown.
    pub const DEFAULT_EGO: Dims = Dims {
        width: 1.9,
        length: 4.5,
        height: 1.6,
    };
}

impl Default for Dims {
    fn default() -> Self {
        Dims::DEFAULT_EGO
    }
}

/// The vehicle carrying the LiDAR.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoState {
    pub id: VehicleId,
    /// World-frame pose.
    pub pose: Pose2,
    /// Sensor mount height above the ground, in meters.
    pub z_offset: f64,
    pub dims: Dims,
}

impl EgoState {
    pub fn new(id: impl Into<VehicleId>, pose: Pose2) -> Self {
        EgoState {
            id: id.into(),
            pose,
            z_offset: 0.0,
            dims: Dims::DEFAULT_EGO,
        }
    }
}

/// One ego pose plus every surrounding vehicle at one timestamp.
///
/// Vehicle boxes are in the world frame with `cz` measured from the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub scene_id: String,
    pub frame_id: String,
    pub timestamp: f64,
    pub ego: EgoState,
    pub vehicles: Vec<OrientedBox>,
}

impl SceneFrame {
    pub fn new(
        scene_id: impl Into<String>,
        frame_id: impl Into<String>,
        ego: EgoState,
        vehicles: Vec<OrientedBox>,
    ) -> Self {
        SceneFrame {
            scene_id: scene_id.into(),
            frame_id: frame_id.into(),
            timestamp: 0.0,
            ego,
            vehicles,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = BTreeSet::new();
        for v in &self.vehicles {
            v.validate()?;
            if v.id == self.ego.id {
                return Err(SceneError::EgoListed {
                    scene_id: self.scene_id.clone(),
                    frame_id: self.frame_id.clone(),
                    id: v.id.clone(),
                });
            }
            if !seen.insert(&v.id) {
                return Err(SceneError::DuplicateVehicle {
                    scene_id: self.scene_id.clone(),
                    frame_id: self.frame_id.clone(),
                    id: v.id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Per-vehicle detection result: TP is 0, FN is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectionLabel {
    TruePositive = 0,
    FalseNegative = 1,
}

impl DetectionLabel {
    pub fn as_index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(DetectionLabel::TruePositive),
            1 => Some(DetectionLabel::FalseNegative),
            _ => None,
        }
    }

    pub fn is_missed(self) -> bool {
        self == DetectionLabel::FalseNegative
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionLabel::TruePositive => "TP",
            DetectionLabel::FalseNegative => "FN",
        }
    }
}

impl fmt::Display for DetectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A frame together with per-vehicle labels. Vehicles without a label are
/// ignored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: SceneFrame,
    pub labels: BTreeMap<VehicleId, DetectionLabel>,
}

/// What one ego's detection model reports about one surrounding vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub scene_id: String,
    pub frame_id: String,
    pub av_id: VehicleId,
    pub vehicle_id: VehicleId,
    pub label: DetectionLabel,
    /// Miss probability for the learned model, 1.0 for the rule-based ones.
    pub score: f64,
    /// Planar distance from the ego, in meters.
    pub distance: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame(ids: &[&str]) -> SceneFrame {
        let vehicles = ids
            .iter()
            .enumerate()
            .map(|(i, id)| OrientedBox::bev(*id, 10.0 * i as f64 + 5.0, 0.0, 1.8, 4.5, 0.0))
            .collect();
        SceneFrame::new("s", "f", EgoState::new("ego", Pose2::default()), vehicles)
    }

    #[test]
    fn validate_catches_duplicates_and_ego_collisions() {
        assert!(frame(&["a", "b"]).validate().is_ok());
        assert!(matches!(
            frame(&["a", "a"]).validate(),
            Err(SceneError::DuplicateVehicle { .. })
        ));
        assert!(matches!(
            frame(&["a", "ego"]).validate(),
            Err(SceneError::EgoListed { .. })
        ));
        let mut bad = frame(&["a"]);
        bad.vehicles[0].width = -1.0;
        assert!(matches!(bad.validate(), Err(SceneError::Geometry(_))));
    }

    #[test]
    fn label_encoding() {
        assert_eq!(DetectionLabel::TruePositive.as_index(), 0);
        assert_eq!(DetectionLabel::FalseNegative.as_index(), 1);
        assert_eq!(DetectionLabel::from_index(1), Some(DetectionLabel::FalseNegative));
        assert_eq!(DetectionLabel::from_index(2), None);
        let labels = vec![DetectionLabel::FalseNegative];
        assert!(labels[0].is_missed());
    }
}
