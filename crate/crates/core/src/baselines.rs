//! Rule-based detection models: perfect detection inside the range and
//! distance-bucketed random dropout.

use alloc::vec::Vec;

use crate::rmlos::vehicles_in_range;
use crate::scene::{DetectionLabel, DetectionOutcome, SceneFrame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("dropout table is empty")]
    Empty,
    #[error("dropout bounds must be finite, positive and strictly increasing (bucket {0})")]
    Bounds(usize),
    #[error("dropout probability {value} in bucket {index} is outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("unknown dropout preset {0:?}")]
    UnknownPreset(alloc::string::String),
}

const PRESET_BOUNDS: [f64; 6] = [10.0, 20.0, 30.0, 40.0, 50.0, 54.0];

/// Names accepted by [`DropoutTable::preset`].
pub const PRESET_NAMES: [&str; 2] = ["signal-control", "trajectory"];

/// Miss probability by distance. Bucket `i` covers `(bound[i-1], bound[i]]`;
/// distances past the last bound use the last probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutTable {
    buckets: Vec<(f64, f64)>,
}

impl DropoutTable {
    pub fn new(buckets: Vec<(f64, f64)>) -> Result<Self, BaselineError> {
        if buckets.is_empty() {
            return Err(BaselineError::Empty);
        }
        let mut prev = 0.0;
        for (i, &(bound, p)) in buckets.iter().enumerate() {
            if !bound.is_finite() || bound <= prev {
                return Err(BaselineError::Bounds(i));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(BaselineError::Probability { index: i, value: p });
            }
            prev = bound;
        }
        Ok(DropoutTable { buckets })
    }

    /// Preset aggregated for the signal-control study.
    pub fn signal_control() -> Self {
        Self::with_preset_bounds([0.192, 0.249, 0.235, 0.239, 0.234, 0.233])
    }

    /// Preset aggregated for the trajectory-reconstruction study.
    pub fn trajectory() -> Self {
        Self::with_preset_bounds([0.026, 0.017, 0.071, 0.231, 0.419, 0.486])
    }

    fn with_preset_bounds(p: [f64; 6]) -> Self {
        DropoutTable {
            buckets: PRESET_BOUNDS.into_iter().zip(p).collect(),
        }
    }

    /// Looks a preset up by name; underscores and dashes are interchangeable.
    pub fn preset(name: &str) -> Result<Self, BaselineError> {
        let normalized: alloc::string::String = name.chars().map(|c| if c == '_' { '-' } else { c }).collect();
        match normalized.as_str() {
            "signal-control" => Ok(Self::signal_control()),
            "trajectory" => Ok(Self::trajectory()),
            _ => Err(BaselineError::UnknownPreset(name.into())),
        }
    }

    pub fn buckets(&self) -> &[(f64, f64)] {
        &self.buckets
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.buckets.iter().map(|b| b.0).collect()
    }

    pub fn bucket_index(&self, distance: f64) -> usize {
        bucket_of(distance, self.buckets.iter().map(|b| b.0))
    }

    pub fn probability(&self, distance: f64) -> f64 {
        self.buckets[self.bucket_index(distance)].1
    }
}

// Upper-inclusive buckets, clamped to the last one.
pub(crate) fn bucket_of(distance: f64, bounds: impl ExactSizeIterator<Item = f64>) -> usize {
    let n = bounds.len();
    let mut bounds = bounds;
    bounds.position(|b| distance <= b).unwrap_or(n.saturating_sub(1))
}

/// Every in-range vehicle is a TP, in graph node order.
pub fn perfect_detection(frame: &SceneFrame, half_extent: f64) -> Vec<DetectionOutcome> {
    vehicles_in_range(frame, half_extent)
        .into_iter()
        .map(|(b, distance)| outcome(frame, b.id, DetectionLabel::TruePositive, distance))
        .collect()
}

/// Each in-range vehicle is independently missed with the table's
/// probability at its distance. The draw for a vehicle depends only on
/// `(seed, scene, frame, ego, vehicle)`.
pub fn random_dropout(frame: &SceneFrame, table: &DropoutTable, seed: u64, half_extent: f64) -> Vec<DetectionOutcome> {
    vehicles_in_range(frame, half_extent)
        .into_iter()
        .map(|(b, distance)| {
            let u = unit_draw(seed, &[&frame.scene_id, &frame.frame_id, frame.ego.id.as_str(), b.id.as_str()]);
            let label = if u < table.probability(distance) {
                DetectionLabel::FalseNegative
            } else {
                DetectionLabel::TruePositive
            };
            outcome(frame, b.id, label, distance)
        })
        .collect()
}

fn outcome(frame: &SceneFrame, vehicle_id: crate::VehicleId, label: DetectionLabel, distance: f64) -> DetectionOutcome {
    DetectionOutcome {
        scene_id: frame.scene_id.clone(),
        frame_id: frame.frame_id.clone(),
        av_id: frame.ego.id.clone(),
        vehicle_id,
        label,
        score: 1.0,
        distance,
    }
}

/// Uniform draw in `[0, 1)` keyed by a seed and a list of strings.
/// FNV-1a over length-prefixed parts, finished with a splitmix64 mix.
pub fn unit_draw(seed: u64, parts: &[&str]) -> f64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&seed.to_le_bytes());
    for p in parts {
        eat(&(p.len() as u64).to_le_bytes());
        eat(p.as_bytes());
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
