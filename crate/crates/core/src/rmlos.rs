//! Refined multi-hop line-of-sight (RM-LoS) graphs.
//!
//! Node 0 is always the ego. The remaining nodes are the in-range vehicles
//! sorted by planar distance from the ego, ties broken by id, so the graph
//! does not depend on the order vehicles were listed in.
//!
//! Edges: an unobstructed vehicle `v` gets `ego -> v`. If the sight line to
//! `v` crosses other vehicles `u`, it is replaced by `ego -> u` and `u -> v`
//! for every such `u`. Edges that do not point from nearer to farther are
//! dropped afterwards, which keeps the relation acyclic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{self, in_detection_range, transform_to_ego, OrientedBox, Vec2, VehicleId};
use crate::linalg::Matrix;
use crate::math;
use crate::scene::{SceneError, SceneFrame};

pub const FEATURE_DIM: usize = 9;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "x",
    "y",
    "z",
    "width",
    "length",
    "height",
    "sin_heading",
    "cos_heading",
    "distance",
];

/// Standard deviations below this are floored during normalization.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RmlosError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("feature statistics need at least one row")]
    EmptyCorpus,
    #[error("feature matrix has {0} columns, expected {FEATURE_DIM}")]
    FeatureWidth(usize),
}

/// Per-node features in the ego sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatures {
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

impl NodeFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.x,
            self.y,
            self.z,
            self.width,
            self.length,
            self.height,
            self.sin_heading,
            self.cos_heading,
            self.distance,
        ]
    }

    fn of_vehicle(b: &OrientedBox, z_offset: f64) -> Self {
        let (s, c) = math::sin_cos(b.yaw);
        NodeFeatures {
            x: b.cx,
            y: b.cy,
            z: b.cz - z_offset,
            width: b.width,
            length: b.length,
            height: b.height,
            sin_heading: s,
            cos_heading: c,
            distance: math::hypot(b.cx, b.cy),
        }
    }

    fn of_ego(frame: &SceneFrame) -> Self {
        let d = frame.ego.dims;
        NodeFeatures {
            x: 0.0,
            y: 0.0,
            z: 0.5 * d.height - frame.ego.z_offset,
            width: d.width,
            length: d.length,
            height: d.height,
            sin_heading: 0.0,
            cos_heading: 1.0,
            distance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: VehicleId,
    pub features: NodeFeatures,
}

/// Directed occlusion graph. Edges are `(from, to)` node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RmlosGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl RmlosGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for &(_, to) in &self.edges {
            deg[to] += 1;
        }
        deg
    }

    /// `n x 9` feature matrix, rows in node order.
    pub fn feature_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.nodes.len() * FEATURE_DIM);
        for n in &self.nodes {
            data.extend_from_slice(&n.features.to_array());
        }
        Matrix::from_vec(self.nodes.len(), FEATURE_DIM, data).expect("row width")
    }

    /// Edges as id pairs, independent of node numbering.
    pub fn id_edges(&self) -> BTreeSet<(VehicleId, VehicleId)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a].id.clone(), self.nodes[b].id.clone()))
            .collect()
    }

    /// Kahn's algorithm; true when the edge relation has no cycle.
    pub fn is_acyclic(&self) -> bool {
        let mut indeg = self.in_degrees();
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            out.entry(a).or_default().push(b);
        }
        let mut stack: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0;
        while let Some(u) = stack.pop() {
            visited += 1;
            for &v in out.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
        visited == self.nodes.len()
    }

    /// Nodes reachable from the ego (node 0), including the ego.
    pub fn reachable_from_ego(&self) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        if self.nodes.is_empty() {
            return seen;
        }
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            if !seen.insert(u) {
                continue;
            }
            stack.extend(self.edges.range((u, 0)..=(u, usize::MAX)).map(|&(_, v)| v));
        }
        seen
    }
}

/// In-range vehicles in the ego frame, sorted by (distance, id).
pub fn vehicles_in_range(frame: &SceneFrame, half_extent: f64) -> Vec<(OrientedBox, f64)> {
    let mut out: Vec<(OrientedBox, f64)> = frame
        .vehicles
        .iter()
        .map(|v| transform_to_ego(v, &frame.ego.pose))
        .filter(|b| in_detection_range(b, half_extent))
        .map(|b| {
            let d = b.planar_distance();
            (b, d)
        })
        .collect();
    out.sort_by(|a, b| geometry::cmp_distance_then_id((a.1, &a.0.id), (b.1, &b.0.id)));
    out
}

pub fn build_rmlos(frame: &SceneFrame, half_extent: f64) -> Result<RmlosGraph, RmlosError> {
    frame.validate()?;
    let in_range = vehicles_in_range(frame, half_extent);
    let boxes: Vec<OrientedBox> = in_range.iter().map(|(b, _)| b.clone()).collect();

    let mut nodes = Vec::with_capacity(boxes.len() + 1);
    nodes.push(GraphNode {
        id: frame.ego.id.clone(),
        features: NodeFeatures::of_ego(frame),
    });
    nodes.extend(boxes.iter().map(|b| GraphNode {
        id: b.id.clone(),
        features: NodeFeatures::of_vehicle(b, frame.ego.z_offset),
    }));

    // Node i + 1 holds boxes[i]; the ego sits at distance 0.
    let distance = |node: usize| if node == 0 { 0.0 } else { in_range[node - 1].1 };
    let mut edges = BTreeSet::new();
    for (i, target) in boxes.iter().enumerate() {
        let v = i + 1;
        let occluders = geometry::occluder_indices(Vec2::ORIGIN, target, &boxes);
        if occluders.is_empty() {
            edges.insert((0, v));
        }
        for j in occluders {
            let u = j + 1;
            edges.insert((0, u));
            edges.insert((u, v));
        }
    }
    edges.retain(|&(u, v)| distance(u) < distance(v));

    Ok(RmlosGraph { nodes, edges })
}

/// Feature matrix in graph node order (row 0 is the ego).
pub fn node_features(frame: &SceneFrame, half_extent: f64) -> Result<Matrix, RmlosError> {
    frame.validate()?;
    let in_range = vehicles_in_range(frame, half_extent);
    let mut data = Vec::with_capacity((in_range.len() + 1) * FEATURE_DIM);
    data.extend_from_slice(&NodeFeatures::of_ego(frame).to_array());
    for (b, _) in &in_range {
        data.extend_from_slice(&NodeFeatures::of_vehicle(b, frame.ego.z_offset).to_array());
    }
    Ok(Matrix::from_vec(in_range.len() + 1, FEATURE_DIM, data).expect("row width"))
}

/// Row-stochastic propagation matrix with self-loops:
/// `A[i][j] = 1 / (in_degree(i) + 1)` when `j -> i` is an edge or `i == j`.
pub fn propagation_matrix(graph: &RmlosGraph) -> Matrix {
    let n = graph.len();
    let indeg = graph.in_degrees();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0 / (indeg[i] + 1) as f64;
    }
    for &(from, to) in &graph.edges {
        a[(to, from)] = 1.0 / (indeg[to] + 1) as f64;
    }
    a
}

/// Per-feature mean and standard deviation for input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl FeatureStats {
    /// Statistics that leave features unchanged.
    pub fn identity() -> Self {
        FeatureStats {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        }
    }

    pub fn normalize(&self, x: &Matrix) -> Result<Matrix, RmlosError> {
        if x.cols() != FEATURE_DIM {
            return Err(RmlosError::FeatureWidth(x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &Matrix) -> Result<Matrix, RmlosError> {
        if x.cols() != FEATURE_DIM {
            return Err(RmlosError::FeatureWidth(x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

/// Population mean and standard deviation over every row of the corpus
/// (Welford's online update), with the standard deviation floored at
/// [`STD_FLOOR`].
pub fn fit_feature_stats(corpus: &[Matrix]) -> Result<FeatureStats, RmlosError> {
    let mut count = 0usize;
    let mut mean = [0.0; FEATURE_DIM];
    let mut m2 = [0.0; FEATURE_DIM];
    for x in corpus {
        if x.cols() != FEATURE_DIM {
            return Err(RmlosError::FeatureWidth(x.cols()));
        }
        for i in 0..x.rows() {
            count += 1;
            let n = count as f64;
            for (j, &v) in x.row(i).iter().enumerate() {
                let delta = v - mean[j];
                mean[j] += delta / n;
                m2[j] += delta * (v - mean[j]);
            }
        }
    }
    if count == 0 {
        return Err(RmlosError::EmptyCorpus);
    }
    let std = m2.map(|s| math::sqrt((s / count as f64).max(0.0)).max(STD_FLOOR));
    Ok(FeatureStats { mean, std })
}
