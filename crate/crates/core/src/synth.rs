//! Synthetic labeled scenes for testing and learnability checks.
//!
//! Vehicles are placed without footprint overlap inside the detection
//! square, mostly along lanes parallel to the ego. Labels come from a fixed
//! rule on the graph and the distance feature: a vehicle is missed if it
//! is occluded by a nearer vehicle and farther than `occluded_distance`,
//! or if it is farther than `far_distance`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{boxes_overlap_bev, transform_to_world, OrientedBox, Pose2, VehicleClass, VehicleId};
use crate::rmlos::{build_rmlos, RmlosError};
use crate::scene::{DetectionLabel, EgoState, LabeledFrame, SceneFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    pub half_extent: f64,
    /// Share of vehicles placed on lanes; the rest get a random pose.
    pub lane_fraction: f64,
    /// Lanes on each side of the ego's own lane line.
    pub lanes_per_side: usize,
    pub lane_width: f64,
    pub occluded_distance: f64,
    pub far_distance: f64,
    /// Ego positions are drawn from `[-world_extent, world_extent]^2`.
    pub world_extent: f64,
    pub sensor_height: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 2000,
            min_vehicles: 8,
            max_vehicles: 40,
            half_extent: crate::DEFAULT_HALF_EXTENT,
            lane_fraction: 0.75,
            lanes_per_side: 3,
            lane_width: 3.5,
            occluded_distance: 20.0,
            far_distance: 48.0,
            world_extent: 1000.0,
            sensor_height: 1.84,
        }
    }
}

/// Generates `config.n_frames` labeled frames. Same seed, same corpus.
pub fn synth_scenes(seed: u64, config: &SynthConfig) -> Vec<LabeledFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_frames)
        .map(|i| {
            let frame = synth_frame(&mut rng, config, i);
            let labels = synthetic_labels(&frame, config).expect("generated frames are valid");
            LabeledFrame { frame, labels }
        })
        .collect()
}

fn synth_frame(rng: &mut ChaCha8Rng, cfg: &SynthConfig, index: usize) -> SceneFrame {
    let w = cfg.world_extent;
    let pose = Pose2::new(
        rng.random_range(-w..=w),
        rng.random_range(-w..=w),
        rng.random_range(-core::f64::consts::PI..core::f64::consts::PI),
    );
    let mut ego = EgoState::new("ego", pose);
    ego.z_offset = cfg.sensor_height;
    let ego_box = OrientedBox::bev("ego", 0.0, 0.0, ego.dims.width, ego.dims.length, 0.0);

    let count = rng.random_range(cfg.min_vehicles..=cfg.max_vehicles.max(cfg.min_vehicles));
    // Keep centers off the boundary so the world round trip stays in range.
    let reach = cfg.half_extent - 1.0;
    let mut placed: Vec<OrientedBox> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count && attempts < 50 * count {
        attempts += 1;
        let class = draw_class(rng);
        let (width, length, height) = draw_dims(rng, class);
        let (x, y, yaw) = if rng.random_bool(cfg.lane_fraction) {
            let lanes = cfg.lanes_per_side as i64;
            let lane = rng.random_range(-lanes..=lanes) as f64;
            let flip = if lane < 0.0 { core::f64::consts::PI } else { 0.0 };
            (
                rng.random_range(-reach..=reach),
                lane * cfg.lane_width + rng.random_range(-0.3..=0.3),
                flip + rng.random_range(-0.05..=0.05),
            )
        } else {
            (
                rng.random_range(-reach..=reach),
                rng.random_range(-reach..=reach),
                rng.random_range(-core::f64::consts::PI..core::f64::consts::PI),
            )
        };
        let id = format!("v{}", placed.len());
        let local = match OrientedBox::new(id, class, [x, y, 0.5 * height], width, length, height, yaw) {
            Ok(b) => b,
            Err(_) => continue,
        };
        if boxes_overlap_bev(&local, &ego_box) || placed.iter().any(|p| boxes_overlap_bev(p, &local)) {
            continue;
        }
        placed.push(local);
    }
    let vehicles = placed.iter().map(|b| transform_to_world(b, &pose)).collect();
    let mut frame = SceneFrame::new("synth", format!("{index:05}"), ego, vehicles);
    frame.timestamp = 0.5 * index as f64;
    frame
}

fn draw_class(rng: &mut ChaCha8Rng) -> VehicleClass {
    let u: f64 = rng.random();
    match u {
        u if u < 0.78 => VehicleClass::Car,
        u if u < 0.86 => VehicleClass::Truck,
        u if u < 0.90 => VehicleClass::Bus,
        u if u < 0.93 => VehicleClass::Trailer,
        u if u < 0.95 => VehicleClass::ConstructionVehicle,
        _ => VehicleClass::Other,
    }
}

fn draw_dims(rng: &mut ChaCha8Rng, class: VehicleClass) -> (f64, f64, f64) {
    let (w, l, h) = match class {
        VehicleClass::Car => ((1.7, 2.0), (4.0, 5.2), (1.4, 1.8)),
        VehicleClass::Truck => ((2.3, 2.6), (6.0, 10.0), (2.8, 3.8)),
        VehicleClass::Bus => ((2.5, 2.6), (10.0, 13.0), (3.0, 3.4)),
        VehicleClass::Trailer => ((2.4, 2.6), (8.0, 14.0), (3.5, 4.0)),
        VehicleClass::ConstructionVehicle => ((2.5, 3.0), (5.0, 8.0), (2.8, 3.5)),
        VehicleClass::Other => ((0.8, 1.0), (2.0, 2.4), (1.2, 1.6)),
    };
    (
        rng.random_range(w.0..=w.1),
        rng.random_range(l.0..=l.1),
        rng.random_range(h.0..=h.1),
    )
}

/// The labeling rule, recomputed from the frame alone.
pub fn synthetic_labels(frame: &SceneFrame, cfg: &SynthConfig) -> Result<BTreeMap<VehicleId, DetectionLabel>, RmlosError> {
    let graph = build_rmlos(frame, cfg.half_extent)?;
    let mut occluded = alloc::vec![false; graph.len()];
    for &(u, v) in &graph.edges {
        if u != 0 {
            occluded[v] = true;
        }
    }
    Ok(graph
        .nodes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, node)| {
            let d = node.features.distance;
            let missed = (occluded[i] && d > cfg.occluded_distance) || d > cfg.far_distance;
            let label = if missed {
                DetectionLabel::FalseNegative
            } else {
                DetectionLabel::TruePositive
            };
            (node.id.clone(), label)
        })
        .collect())
}
