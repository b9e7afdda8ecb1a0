//! Independent reference implementations shared by the property tests and
//! the acceptance harness. Nothing here calls into the code under test
//! except for plain data types.
#![allow(dead_code)]

use midar_core::labeling::PredBox;
use midar_core::{EgoState, Matrix, OrientedBox, Pose2, SceneFrame, Segment2, VehicleClass};
use rand::Rng;

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

const CLASSES: [VehicleClass; 6] = VehicleClass::ALL;

/// Random box; footprints may overlap other boxes.
pub fn random_box<R: Rng>(rng: &mut R, id: String, reach: f64) -> OrientedBox {
    let height = rng.random_range(1.2..4.0);
    OrientedBox::new(
        id,
        CLASSES[rng.random_range(0..CLASSES.len())],
        [rng.random_range(-reach..reach), rng.random_range(-reach..reach), 0.5 * height],
        rng.random_range(0.8..2.6),
        rng.random_range(2.0..12.0),
        height,
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

/// Random world-frame scene around a random ego pose. Some vehicles fall
/// outside the 54 m square.
pub fn random_frame<R: Rng>(rng: &mut R, max_vehicles: usize) -> SceneFrame {
    let pose = Pose2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-3.2..3.2));
    let n = rng.random_range(0..=max_vehicles);
    let vehicles = (0..n)
        .map(|i| {
            let local = random_box(rng, format!("v{i}"), 60.0);
            midar_core::geometry::transform_to_world(&local, &pose)
        })
        .collect();
    let mut ego = EgoState::new("ego", pose);
    ego.z_offset = 1.84;
    SceneFrame::new("s", "f", ego, vehicles)
}

/// Rectangle membership with the footprint grown by `margin` on every side
/// (negative shrinks).
pub fn point_in_footprint(b: &OrientedBox, x: f64, y: f64, margin: f64) -> bool {
    let (dx, dy) = (x - b.cx, y - b.cy);
    let (s, c) = b.yaw.sin_cos();
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= 0.5 * b.length + margin && ly.abs() <= 0.5 * b.width + margin
}

/// Dense sampling along the segment. Returns `Some(hit)` when the answer is
/// the same for the footprint shrunk and grown by `delta`, `None` for
/// grazing instances.
pub fn segment_box_dense(seg: &Segment2, b: &OrientedBox, delta: f64) -> Option<bool> {
    let len = ((seg.bx - seg.ax).powi(2) + (seg.by - seg.ay).powi(2)).sqrt();
    let n = ((len / (0.25 * delta)).ceil() as usize).max(1);
    let (mut inner, mut outer) = (false, false);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let x = seg.ax + t * (seg.bx - seg.ax);
        let y = seg.ay + t * (seg.by - seg.ay);
        inner |= point_in_footprint(b, x, y, -delta);
        outer |= point_in_footprint(b, x, y, delta);
    }
    (inner == outer).then_some(inner)
}

/// Voxel-count IoU on an `res^3` grid over the joint bounding volume.
pub fn voxel_iou(a: &OrientedBox, b: &OrientedBox, res: usize) -> f64 {
    let reach = |o: &OrientedBox| 0.5 * (o.length.hypot(o.width));
    let x0 = (a.cx - reach(a)).min(b.cx - reach(b));
    let x1 = (a.cx + reach(a)).max(b.cx + reach(b));
    let y0 = (a.cy - reach(a)).min(b.cy - reach(b));
    let y1 = (a.cy + reach(a)).max(b.cy + reach(b));
    let z0 = (a.cz - 0.5 * a.height).min(b.cz - 0.5 * b.height);
    let z1 = (a.cz + 0.5 * a.height).max(b.cz + 0.5 * b.height);
    let (dx, dy, dz) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64, (z1 - z0) / res as f64);
    // Per column, count voxel centers inside each vertical interval.
    let zin = |o: &OrientedBox, z: f64| (z - o.cz).abs() <= 0.5 * o.height;
    let (mut za, mut zb, mut zab) = (0usize, 0usize, 0usize);
    for k in 0..res {
        let z = z0 + (k as f64 + 0.5) * dz;
        let (ia, ib) = (zin(a, z), zin(b, z));
        za += ia as usize;
        zb += ib as usize;
        zab += (ia && ib) as usize;
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..res {
        let x = x0 + (i as f64 + 0.5) * dx;
        for j in 0..res {
            let y = y0 + (j as f64 + 0.5) * dy;
            let ia = point_in_footprint(a, x, y, 0.0);
            let ib = point_in_footprint(b, x, y, 0.0);
            match (ia, ib) {
                (true, true) => {
                    inter += zab;
                    union += za + zb - zab;
                }
                (true, false) => union += za,
                (false, true) => union += zb,
                (false, false) => {}
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Minimum assignment cost by enumerating every injective map from the
/// smaller side into the larger one.
pub fn brute_force_assignment(cost: &Matrix) -> f64 {
    let (m, k) = cost.shape();
    let transpose = m > k;
    let (rows, cols) = if transpose { (k, m) } else { (m, k) };
    let at = |r: usize, c: usize| if transpose { cost[(c, r)] } else { cost[(r, c)] };
    fn go(r: usize, rows: usize, cols: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if r == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(r + 1, rows, cols, used, acc + at(r, c), best, at);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, rows, cols, &mut vec![false; cols], 0.0, &mut best, &at);
    if rows == 0 {
        0.0
    } else {
        best
    }
}

/// Student t upper tail by composite Simpson quadrature of the unnormalized
/// density; the normalizer is integrated the same way.
pub fn t_sf_quadrature(t: f64, df: f64) -> f64 {
    let f = |x: f64| (1.0 + x * x / df).powf(-0.5 * (df + 1.0));
    // x = tan(theta) maps the real line onto (-pi/2, pi/2).
    let g = |theta: f64| {
        let c = theta.cos();
        f(theta.tan()) / (c * c)
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    // Endpoints at +-pi/2 contribute zero for df >= 1.
    let edge = half - 1e-12;
    let total = simpson(-edge, edge, 400_000);
    let tail = simpson(t.atan(), edge, 400_000);
    tail / total
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// AUC by counting every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            den += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

/// Kept predictions paired to ground truth, for count identities.
pub fn kept(preds: &[PredBox], threshold: f64) -> usize {
    preds.iter().filter(|p| p.score >= threshold).count()
}
