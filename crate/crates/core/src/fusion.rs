//! Multi-AV fusion of detection outcomes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;

use crate::geometry::VehicleId;
use crate::scene::DetectionOutcome;

/// Vehicles known to the fleet: every AV plus every vehicle at least one AV
/// labeled TP. `av_ids` lists AVs that may have produced no outcomes.
pub fn fuse_observations<'a>(
    av_ids: impl IntoIterator<Item = &'a VehicleId>,
    outcomes: impl IntoIterator<Item = &'a DetectionOutcome>,
) -> BTreeSet<VehicleId> {
    let mut fused: BTreeSet<VehicleId> = av_ids.into_iter().cloned().collect();
    for o in outcomes {
        fused.insert(o.av_id.clone());
        if !o.label.is_missed() {
            fused.insert(o.vehicle_id.clone());
        }
    }
    fused
}

/// [`fuse_observations`] applied per `(scene_id, frame_id)`.
pub fn fuse_by_frame<'a>(
    outcomes: impl IntoIterator<Item = &'a DetectionOutcome>,
) -> BTreeMap<(String, String), BTreeSet<VehicleId>> {
    let mut groups: BTreeMap<(String, String), BTreeSet<VehicleId>> = BTreeMap::new();
    for o in outcomes {
        let fused = groups.entry((o.scene_id.clone(), o.frame_id.clone())).or_default();
        fused.extend(fuse_observations(core::iter::empty(), core::iter::once(o)));
    }
    groups
}
