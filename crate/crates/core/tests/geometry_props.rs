mod oracles;

use midar_core::geometry::{find_occluders, segment_intersects_box_bev, transform_to_ego, transform_to_world};
use midar_core::rmlos::build_rmlos;
use midar_core::{OrientedBox, Pose2, SceneFrame, Segment2, Vec2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn segment_test_agrees_with_dense_sampling() {
    let mut rng = oracles::rng(11);
    let (mut checked, mut hits) = (0, 0);
    while checked < 2000 {
        let b = oracles::random_box(&mut rng, "b".into(), 20.0);
        // Aim half the segments through the box neighborhood.
        let a = Vec2::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
        let end = if rng.random_bool(0.5) {
            let through = Vec2::new(b.cx + rng.random_range(-6.0..6.0), b.cy + rng.random_range(-6.0..6.0));
            a.add(through.sub(a).scale(rng.random_range(0.5..2.0)))
        } else {
            Vec2::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))
        };
        let seg = Segment2::new(a, end);
        let Some(expected) = oracles::segment_box_dense(&seg, &b, 0.02) else {
            continue;
        };
        assert_eq!(segment_intersects_box_bev(&seg, &b), expected, "{seg:?} {b:?}");
        checked += 1;
        hits += expected as usize;
    }
    assert!(hits > 300 && hits < 1700, "unbalanced instance mix: {hits} hits");
}

#[test]
fn graph_is_invariant_under_rigid_motion() {
    let mut rng = oracles::rng(12);
    for _ in 0..200 {
        let frame = oracles::random_frame(&mut rng, 25);
        let motion = Pose2::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-3.2..3.2));
        let mut moved_ego = frame.ego.clone();
        let ego_box = OrientedBox::bev("e", frame.ego.pose.x, frame.ego.pose.y, 1.0, 1.0, frame.ego.pose.heading);
        let e = transform_to_world(&ego_box, &motion);
        moved_ego.pose = Pose2::new(e.cx, e.cy, e.yaw);
        let moved = SceneFrame::new(
            "s",
            "f",
            moved_ego,
            frame.vehicles.iter().map(|v| transform_to_world(v, &motion)).collect(),
        );
        let g0 = build_rmlos(&frame, 54.0).unwrap();
        let g1 = build_rmlos(&moved, 54.0).unwrap();
        // Boxes on the range boundary may flip; such frames are vanishingly rare.
        assert_eq!(g0.len(), g1.len());
        assert_eq!(g0.id_edges(), g1.id_edges());
        let (f0, f1) = (g0.feature_matrix(), g1.feature_matrix());
        assert!(f0.max_abs_diff(&f1) <= 1e-9, "features moved by {}", f0.max_abs_diff(&f1));
    }
}

#[test]
fn occluders_ignore_input_order() {
    let mut rng = oracles::rng(13);
    for _ in 0..300 {
        let mut others: Vec<OrientedBox> = (0..12).map(|i| oracles::random_box(&mut rng, format!("o{i}"), 30.0)).collect();
        let target = oracles::random_box(&mut rng, "t".into(), 40.0);
        let before = find_occluders(Vec2::ORIGIN, &target, &others);
        others.shuffle(&mut rng);
        assert_eq!(find_occluders(Vec2::ORIGIN, &target, &others), before);
        // Every reported occluder is crossed by the sight line.
        let sight = Segment2::new(Vec2::ORIGIN, target.center());
        for id in &before {
            let b = others.iter().find(|b| &b.id == id).unwrap();
            assert!(segment_intersects_box_bev(&sight, b));
        }
    }
}

proptest! {
    #[test]
    fn ego_transform_round_trips(
        x in -1e3..1e3f64, y in -1e3..1e3f64, yaw in -7.0..7.0f64,
        ex in -1e3..1e3f64, ey in -1e3..1e3f64, eh in -7.0..7.0f64,
    ) {
        let b = OrientedBox::bev("v", x, y, 1.8, 4.5, yaw);
        let pose = Pose2::new(ex, ey, eh);
        let back = transform_to_world(&transform_to_ego(&b, &pose), &pose);
        prop_assert!((back.cx - b.cx).abs() <= 1e-9);
        prop_assert!((back.cy - b.cy).abs() <= 1e-9);
        let dyaw = midar_core::geometry::wrap_angle(back.yaw - b.yaw);
        prop_assert!(dyaw.abs() <= 1e-9);
        let local = transform_to_ego(&b, &pose);
        let d_world = (x - ex).hypot(y - ey);
        prop_assert!((local.planar_distance() - d_world).abs() <= 1e-9);
    }

    #[test]
    fn reversed_segment_gives_same_answer(
        ax in -20.0..20.0f64, ay in -20.0..20.0f64, bx in -20.0..20.0f64, by in -20.0..20.0f64,
        cx in -10.0..10.0f64, cy in -10.0..10.0f64, yaw in -3.2..3.2f64,
    ) {
        let b = OrientedBox::bev("v", cx, cy, 2.0, 5.0, yaw);
        let s = Segment2::new(Vec2::new(ax, ay), Vec2::new(bx, by));
        let r = Segment2::new(Vec2::new(bx, by), Vec2::new(ax, ay));
        prop_assert_eq!(segment_intersects_box_bev(&s, &b), segment_intersects_box_bev(&r, &b));
    }
}
