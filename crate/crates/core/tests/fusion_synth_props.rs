mod oracles;

use std::collections::BTreeSet;

use midar_core::baselines::{perfect_detection, random_dropout, DropoutTable};
use midar_core::fusion::fuse_observations;
use midar_core::geometry::{in_detection_range, transform_to_ego};
use midar_core::synth::{synth_scenes, synthetic_labels, SynthConfig};
use midar_core::{DetectionOutcome, VehicleId};
use rand::seq::SliceRandom;

fn outcomes_for(seed: u64) -> (Vec<VehicleId>, Vec<DetectionOutcome>) {
    let mut rng = oracles::rng(seed);
    let base = oracles::random_frame(&mut rng, 30);
    let mut avs = Vec::new();
    let mut all = Vec::new();
    // Three AVs taken from the scene itself, each seeing the others.
    for k in 0..3.min(base.vehicles.len()) {
        let own = &base.vehicles[k];
        let mut frame = base.clone();
        frame.ego.id = own.id.clone();
        frame.ego.pose = midar_core::Pose2::new(own.cx, own.cy, own.yaw);
        frame.vehicles.remove(k);
        avs.push(own.id.clone());
        all.extend(random_dropout(&frame, &DropoutTable::trajectory(), seed, 54.0));
    }
    (avs, all)
}

#[test]
fn fusion_is_idempotent_and_order_free() {
    let mut rng = oracles::rng(61);
    for seed in 0..100 {
        let (avs, outcomes) = outcomes_for(seed);
        let fused = fuse_observations(&avs, &outcomes);
        let doubled: Vec<DetectionOutcome> = outcomes.iter().chain(&outcomes).cloned().collect();
        assert_eq!(fuse_observations(&avs, &doubled), fused);
        let mut shuffled = outcomes.clone();
        shuffled.shuffle(&mut rng);
        let mut avs_rev = avs.clone();
        avs_rev.reverse();
        assert_eq!(fuse_observations(&avs_rev, &shuffled), fused);
        let detected: BTreeSet<VehicleId> = outcomes
            .iter()
            .filter(|o| !o.label.is_missed())
            .map(|o| o.vehicle_id.clone())
            .chain(avs.iter().cloned())
            .collect();
        assert_eq!(fused, detected);
    }
    assert!(fuse_observations(&[], &[]).is_empty());
}

#[test]
fn perfect_detection_is_the_range_filter() {
    let mut rng = oracles::rng(62);
    for _ in 0..200 {
        let frame = oracles::random_frame(&mut rng, 40);
        let got: BTreeSet<VehicleId> = perfect_detection(&frame, 54.0).into_iter().map(|o| o.vehicle_id).collect();
        let want: BTreeSet<VehicleId> = frame
            .vehicles
            .iter()
            .filter(|v| in_detection_range(&transform_to_ego(v, &frame.ego.pose), 54.0))
            .map(|v| v.id.clone())
            .collect();
        assert_eq!(got, want);
    }
}

#[test]
fn synthetic_labels_follow_from_the_frame() {
    let cfg = SynthConfig {
        n_frames: 300,
        ..SynthConfig::default()
    };
    let data = synth_scenes(63, &cfg);
    let (mut missed, mut total) = (0usize, 0usize);
    for f in &data {
        assert_eq!(synthetic_labels(&f.frame, &cfg).unwrap(), f.labels);
        missed += f.labels.values().filter(|l| l.is_missed()).count();
        total += f.labels.len();
    }
    let rate = missed as f64 / total as f64;
    assert!(rate > 0.05 && rate < 0.95, "FN fraction {rate}");
}
