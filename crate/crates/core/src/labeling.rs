//! Ground-truth labeling: 3D IoU, optimal assignment and TP/FN/FP emission.
//!
//! A frame's detector output is reduced to one label per ground-truth box:
//! predictions below the score gate are discarded, both lists are split by
//! class, each class is matched by minimum total negative IoU, and matches
//! whose IoU does not exceed the class threshold are rejected.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{bev_intersection_area, OrientedBox, VehicleClass, VehicleId};
use crate::linalg::Matrix;
use crate::scene::DetectionLabel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelingError {
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("prediction {id} has score {score} outside [0, 1]")]
    InvalidScore { id: VehicleId, score: f64 },
    #[error("{what} threshold {value} must lie in (0, 1)")]
    InvalidThreshold { what: &'static str, value: f64 },
}

/// A detector output box with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredBox {
    pub bbox: OrientedBox,
    pub score: f64,
}

impl PredBox {
    pub fn new(bbox: OrientedBox, score: f64) -> Result<Self, LabelingError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(LabelingError::InvalidScore { id: bbox.id, score });
        }
        Ok(PredBox { bbox, score })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Predictions scoring below this are discarded before matching.
    pub score_threshold: f64,
    /// Minimum IoU (exclusive) per class, indexed like [`VehicleClass::ALL`].
    pub iou_thresholds: [f64; 6],
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            score_threshold: 0.4,
            iou_thresholds: [0.7, 0.5, 0.5, 0.5, 0.5, 0.5],
        }
    }
}

impl MatchConfig {
    pub fn iou_threshold(&self, class: VehicleClass) -> f64 {
        self.iou_thresholds[class_index(class)]
    }

    pub fn validate(&self) -> Result<(), LabelingError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.score_threshold) {
            return Err(LabelingError::InvalidThreshold {
                what: "score",
                value: self.score_threshold,
            });
        }
        if let Some(&v) = self.iou_thresholds.iter().find(|&&v| !open(v)) {
            return Err(LabelingError::InvalidThreshold { what: "iou", value: v });
        }
        Ok(())
    }
}

fn class_index(class: VehicleClass) -> usize {
    match class {
        VehicleClass::Car => 0,
        VehicleClass::Truck => 1,
        VehicleClass::Bus => 2,
        VehicleClass::Trailer => 3,
        VehicleClass::ConstructionVehicle => 4,
        VehicleClass::Other => 5,
    }
}

/// One accepted ground-truth/prediction pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub gt: VehicleId,
    pub pred: VehicleId,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameLabels {
    /// One entry per ground-truth box, in input order.
    pub gt: Vec<(VehicleId, DetectionLabel)>,
    /// Kept predictions left without a valid match, in input order.
    pub false_positives: Vec<VehicleId>,
    pub matches: Vec<Match>,
}

impl FrameLabels {
    pub fn count(&self, label: DetectionLabel) -> usize {
        self.gt.iter().filter(|(_, l)| *l == label).count()
    }

    pub fn to_map(&self) -> BTreeMap<VehicleId, DetectionLabel> {
        self.gt.iter().cloned().collect()
    }
}

/// Intersection over union of two 3D boxes: footprint overlap times
/// vertical overlap, over the union volume. Zero when the union is empty.
/// Exactly symmetric: the clip always runs in a canonical box order.
pub fn iou3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let key = |o: &OrientedBox| [o.cx, o.cy, o.cz, o.width, o.length, o.height, o.yaw];
    let (ka, kb) = (key(a), key(b));
    let swap = ka
        .iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .is_some_and(|o| o.is_gt());
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let bottom = (a.cz - 0.5 * a.height).max(b.cz - 0.5 * b.height);
    let top = (a.cz + 0.5 * a.height).min(b.cz + 0.5 * b.height);
    let dz = top - bottom;
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(m, k)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost one-to-one assignment on an `m x k` matrix.
///
/// Rectangular inputs are zero-padded to square. Among all optimal
/// assignments the lexicographically smallest one (rows ascending, each
/// taking the smallest feasible column) is returned, so equal-cost ties
/// resolve the same way on every platform.
pub fn hungarian(cost: &Matrix) -> Result<Assignment, LabelingError> {
    let (m, k) = cost.shape();
    let mut scale = 1.0f64;
    for i in 0..m {
        for j in 0..k {
            let c = cost[(i, j)];
            if !c.is_finite() {
                return Err(LabelingError::NonFiniteCost { row: i, col: j });
            }
            scale = scale.max(c.abs());
        }
    }
    if m == 0 || k == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        });
    }
    let n = m.max(k);
    let at = |i: usize, j: usize| if i < m && j < k { cost[(i, j)] } else { 0.0 };

    let (u, v) = dual_potentials(n, &at);
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| at(i, j) - u[i] - v[j] <= tol).collect())
        .collect();
    let row_to_col = lexicographic_matching(&tight);

    let mut pairs = Vec::with_capacity(m.min(k));
    let mut total = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(m) {
        if j < k {
            pairs.push((i, j));
            total += cost[(i, j)];
        }
    }
    Ok(Assignment { pairs, cost: total })
}

// Shortest augmenting path method with row/column potentials, O(n^3).
// Returns potentials such that every reduced cost c - u - v is >= 0 and an
// optimal assignment lies on zero reduced cost entries.
fn dual_potentials(n: usize, at: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    // 1-based with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

// Lexicographically smallest perfect matching inside the tight subgraph.
// Starts from any perfect matching, then fixes rows in order, moving each to
// its smallest column that still admits a completion.
fn lexicographic_matching(tight: &[Vec<bool>]) -> Vec<usize> {
    let n = tight.len();
    let mut row_to_col = vec![usize::MAX; n];
    let mut col_to_row = vec![usize::MAX; n];
    for r in 0..n {
        let mut seen = vec![false; n];
        let found = augment(tight, r, &mut seen, &mut row_to_col, &mut col_to_row, 0);
        debug_assert!(found, "tight subgraph must have a perfect matching");
    }

    for i in 0..n {
        for j in 0..row_to_col[i] {
            if !tight[i][j] || col_to_row[j] < i {
                continue;
            }
            // Move i onto j; j's holder must reach i's old column through
            // unfixed rows.
            let old = row_to_col[i];
            let holder = col_to_row[j];
            let mut r2c = row_to_col.clone();
            let mut c2r = col_to_row.clone();
            r2c[i] = j;
            c2r[j] = i;
            r2c[holder] = usize::MAX;
            c2r[old] = usize::MAX;
            let mut seen = vec![false; n];
            seen[j] = true;
            for &c in &row_to_col[..i] {
                seen[c] = true;
            }
            if augment(tight, holder, &mut seen, &mut r2c, &mut c2r, i + 1) {
                row_to_col = r2c;
                col_to_row = c2r;
                break;
            }
        }
    }
    row_to_col
}

// Kuhn's augmenting path search from `row`, using only rows >= `min_row`.
fn augment(
    tight: &[Vec<bool>],
    row: usize,
    seen: &mut [bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    min_row: usize,
) -> bool {
    for c in 0..tight.len() {
        if !tight[row][c] || seen[c] {
            continue;
        }
        seen[c] = true;
        let holder = col_to_row[c];
        let free = holder == usize::MAX;
        if free || (holder >= min_row && augment(tight, holder, seen, row_to_col, col_to_row, min_row)) {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
        }
    }
    false
}

/// Labels every ground-truth box TP or FN and collects unmatched kept
/// predictions as FP.
pub fn label_frame(gt: &[OrientedBox], preds: &[PredBox], cfg: &MatchConfig) -> Result<FrameLabels, LabelingError> {
    cfg.validate()?;
    for p in preds {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(LabelingError::InvalidScore {
                id: p.bbox.id.clone(),
                score: p.score,
            });
        }
    }
    let kept: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].score >= cfg.score_threshold)
        .collect();

    let mut gt_matched = vec![false; gt.len()];
    let mut pred_matched = vec![false; preds.len()];
    let mut matches = Vec::new();

    for class in VehicleClass::ALL {
        let g: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].class == class).collect();
        let p: Vec<usize> = kept.iter().copied().filter(|&i| preds[i].bbox.class == class).collect();
        if g.is_empty() || p.is_empty() {
            continue;
        }
        let iou = Matrix::from_fn(g.len(), p.len(), |r, c| iou3d(&gt[g[r]], &preds[p[c]].bbox));
        let assignment = hungarian(&iou.map(|x| -x))?;
        let threshold = cfg.iou_threshold(class);
        for (r, c) in assignment.pairs {
            let value = iou[(r, c)];
            if value > threshold {
                gt_matched[g[r]] = true;
                pred_matched[p[c]] = true;
                matches.push(Match {
                    gt: gt[g[r]].id.clone(),
                    pred: preds[p[c]].bbox.id.clone(),
                    iou: value,
                });
            }
        }
    }

    let labels = gt
        .iter()
        .zip(&gt_matched)
        .map(|(b, &hit)| {
            let label = if hit {
                DetectionLabel::TruePositive
            } else {
                DetectionLabel::FalseNegative
            };
            (b.id.clone(), label)
        })
        .collect();
    let false_positives = kept
        .iter()
        .filter(|&&i| !pred_matched[i])
        .map(|&i| preds[i].bbox.id.clone())
        .collect();
    Ok(FrameLabels {
        gt: labels,
        false_positives,
        matches,
    })
}
