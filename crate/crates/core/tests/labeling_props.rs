mod oracles;

use std::collections::BTreeSet;

use midar_core::labeling::{hungarian, iou3d, label_frame, MatchConfig, PredBox};
use midar_core::{DetectionLabel, Matrix, OrientedBox, VehicleClass};
use rand::Rng;

#[test]
fn hungarian_matches_brute_force() {
    let mut rng = oracles::rng(41);
    for case in 0..1000 {
        let m = rng.random_range(0..=7);
        let k = rng.random_range(0..=7);
        // Mix continuous costs with small integers to force ties.
        let integer = case % 3 == 0;
        let cost = Matrix::from_fn(m, k, |_, _| {
            if integer {
                rng.random_range(0..4) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.pairs.len(), m.min(k));
        let rows: BTreeSet<usize> = a.pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<usize> = a.pairs.iter().map(|p| p.1).collect();
        assert_eq!(rows.len(), a.pairs.len());
        assert_eq!(cols.len(), a.pairs.len());
        let total: f64 = a.pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
        let best = oracles::brute_force_assignment(&cost);
        assert!((total - best).abs() <= 1e-9, "case {case}: {total} vs {best}");
        assert!((a.cost - total).abs() <= 1e-9);
    }
}

#[test]
fn iou_matches_voxel_count() {
    let mut rng = oracles::rng(42);
    for _ in 0..100 {
        let a = oracles::random_box(&mut rng, "a".into(), 1.0);
        let mut b = oracles::random_box(&mut rng, "b".into(), 1.0);
        b.cz += rng.random_range(-1.0..1.0);
        let exact = iou3d(&a, &b);
        assert_eq!(exact, iou3d(&b, &a));
        let voxel = oracles::voxel_iou(&a, &b, 200);
        assert!((exact - voxel).abs() <= 0.01, "iou {exact} vs voxel {voxel}");
    }
}

#[test]
fn axis_aligned_half_overlap_is_one_third() {
    let a = OrientedBox::new("a", VehicleClass::Car, [0.0, 0.0, 1.0], 2.0, 4.0, 2.0, 0.0).unwrap();
    let b = OrientedBox::new("b", VehicleClass::Car, [2.0, 0.0, 1.0], 2.0, 4.0, 2.0, 0.0).unwrap();
    assert_eq!(iou3d(&a, &b), 1.0 / 3.0);
}

fn jitter<R: Rng>(rng: &mut R, b: &OrientedBox, id: String) -> OrientedBox {
    let mut p = b.clone();
    p.id = id.into();
    p.cx += rng.random_range(-1.5..1.5);
    p.cy += rng.random_range(-1.5..1.5);
    p.yaw += rng.random_range(-0.3..0.3);
    p
}

#[test]
fn fuzzed_labeling_keeps_count_identities() {
    let mut rng = oracles::rng(43);
    let cfg = MatchConfig::default();
    for _ in 0..500 {
        let n_gt = rng.random_range(0..12);
        let gt: Vec<OrientedBox> = (0..n_gt)
            .map(|i| oracles::random_box(&mut rng, format!("g{i}"), 30.0))
            .collect();
        let mut preds: Vec<PredBox> = Vec::new();
        for (i, g) in gt.iter().enumerate() {
            for j in 0..rng.random_range(0..3) {
                let mut p = jitter(&mut rng, g, format!("p{i}_{j}"));
                if rng.random_bool(0.1) {
                    p.class = VehicleClass::Truck;
                }
                preds.push(PredBox::new(p, rng.random::<f64>()).unwrap());
            }
        }
        for j in 0..rng.random_range(0..4) {
            let p = oracles::random_box(&mut rng, format!("x{j}"), 30.0);
            preds.push(PredBox::new(p, rng.random::<f64>()).unwrap());
        }

        let out = label_frame(&gt, &preds, &cfg).unwrap();
        let tp = out.count(DetectionLabel::TruePositive);
        let fnn = out.count(DetectionLabel::FalseNegative);
        assert_eq!(tp + fnn, gt.len());
        assert_eq!(tp, out.matches.len());
        assert_eq!(out.false_positives.len(), oracles::kept(&preds, cfg.score_threshold) - tp);
        let matched_preds: BTreeSet<_> = out.matches.iter().map(|m| m.pred.clone()).collect();
        assert_eq!(matched_preds.len(), out.matches.len());
        for m in &out.matches {
            let g = gt.iter().find(|b| b.id == m.gt).unwrap();
            let p = preds.iter().find(|p| p.bbox.id == m.pred).unwrap();
            assert_eq!(g.class, p.bbox.class);
            assert!(p.score >= cfg.score_threshold);
            assert!(m.iou > cfg.iou_threshold(g.class));
            assert_eq!(m.iou, iou3d(g, &p.bbox));
        }
        let ids: Vec<_> = out.gt.iter().map(|(id, _)| id.clone()).collect();
        assert_eq!(ids, gt.iter().map(|b| b.id.clone()).collect::<Vec<_>>());
    }
}
