//! GRU-gated APPNP node classifier.
//!
//! Forward pass, per frame:
//!
//! ```text
//! X  -> normalize -> H = ReLU(X W1 + b1) W2 + b2
//! Z0 = H,  Z(k+1) = (1 - alpha) A Z(k) + alpha H        (K times)
//! R  = sigmoid(Z W_r + H U_r + b_r)
//! G  = sigmoid(Z W_a + H U_a + b_a)
//! H~ = tanh(Z W_h + (R * H) U_h + b_h)
//! Y  = (1 - G) * H + G * H~
//! p  = softmax(Y W_d + b_d)                              (TP, FN)
//! ```
//!
//! `A` is the row-stochastic matrix from [`crate::rmlos::propagation_matrix`].
//! During training, dropout is applied to the MLP hidden activation and to
//! `H` before propagation.

mod backward;
mod optim;
mod train;

pub use backward::{batch_loss, cross_entropy, param_gradients, PreparedFrame};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use train::{predict_labeled, train, TrainConfig, TrainOutcome};

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::VehicleId;
use crate::linalg::{gemm, solve, LinalgError, Matrix, Trans};
use crate::math;
use crate::rmlos::{build_rmlos, propagation_matrix, FeatureStats, RmlosError, FEATURE_DIM};
use crate::scene::{DetectionLabel, SceneFrame};

/// Version tag written alongside serialized parameters.
pub const SCHEMA_VERSION: u32 = 1;

/// Clamp applied to probabilities inside the log of the cross entropy.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Graph(#[from] RmlosError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Number of propagation steps.
    pub k: usize,
    /// Teleport probability in `(0, 1]`.
    pub alpha: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            k: 6,
            alpha: 0.1,
            hidden_dim: 128,
            dropout: 0.3,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k < 1 {
            return Err(ModelError::Hyper("K must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ModelError::Hyper(alloc::format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::Hyper("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Hyper(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Every learnable tensor. Biases are stored as `1 x n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Matrix,
    pub w_a: Matrix,
    pub u_a: Matrix,
    pub b_a: Matrix,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Matrix,
    pub w_d: Matrix,
    pub b_d: Matrix,
}

pub const TENSOR_NAMES: [&str; 15] = [
    "w1", "b1", "w2", "b2", "w_r", "u_r", "b_r", "w_a", "u_a", "b_a", "w_h", "u_h", "b_h", "w_d",
    "b_d",
];

impl Weights {
    pub fn zeros(d: usize) -> Self {
        let sq = || Matrix::zeros(d, d);
        let bias = || Matrix::zeros(1, d);
        Weights {
            w1: Matrix::zeros(FEATURE_DIM, d),
            b1: bias(),
            w2: sq(),
            b2: bias(),
            w_r: sq(),
            u_r: sq(),
            b_r: bias(),
            w_a: sq(),
            u_a: sq(),
            b_a: bias(),
            w_h: sq(),
            u_h: sq(),
            b_h: bias(),
            w_d: Matrix::zeros(d, 2),
            b_d: Matrix::zeros(1, 2),
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn glorot<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut w = Weights::zeros(d);
        for (name, t) in TENSOR_NAMES.into_iter().zip(w.tensors_mut()) {
            if is_bias(name) {
                continue;
            }
            let limit = math::sqrt(6.0 / (t.rows() + t.cols()) as f64);
            for v in t.as_mut_slice() {
                *v = (2.0 * rng.random::<f64>() - 1.0) * limit;
            }
        }
        w
    }

    pub fn hidden_dim(&self) -> usize {
        self.w2.rows()
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&Matrix; 15] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w_r, &self.u_r, &self.b_r, &self.w_a,
            &self.u_a, &self.b_a, &self.w_h, &self.u_h, &self.b_h, &self.w_d, &self.b_d,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 15] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_a,
            &mut self.u_a,
            &mut self.b_a,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
            &mut self.w_d,
            &mut self.b_d,
        ]
    }

    /// Checks every tensor against the shapes implied by hidden size `d`.
    pub fn check_shapes(&self, d: usize) -> Result<(), ModelError> {
        for (name, t) in TENSOR_NAMES.into_iter().zip(self.tensors()) {
            let expected = expected_shape(name, d);
            if t.shape() != expected {
                return Err(ModelError::Shape {
                    name,
                    expected,
                    found: t.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Shape of tensor `name` for hidden size `d`.
pub fn expected_shape(name: &str, d: usize) -> (usize, usize) {
    match name {
        "w1" => (FEATURE_DIM, d),
        "w_d" => (d, 2),
        "b_d" => (1, 2),
        n if is_bias(n) => (1, d),
        _ => (d, d),
    }
}

pub fn is_bias(name: &str) -> bool {
    name.starts_with('b')
}

/// Everything needed to run the model on a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Weights,
    pub hyper: Hyper,
    pub stats: FeatureStats,
    pub schema_version: u32,
}

impl ModelParams {
    pub fn new(weights: Weights, hyper: Hyper, stats: FeatureStats) -> Result<Self, ModelError> {
        let p = ModelParams {
            weights,
            hyper,
            stats,
            schema_version: SCHEMA_VERSION,
        };
        p.validate()?;
        Ok(p)
    }

    /// All-zero weights; every node then gets `p_fn = 0.5`.
    pub fn zeros(hyper: Hyper) -> Self {
        ModelParams {
            weights: Weights::zeros(hyper.hidden_dim),
            hyper,
            stats: FeatureStats::identity(),
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.hyper.validate()?;
        self.weights.check_shapes(self.hyper.hidden_dim)
    }
}

/// Model output for one surrounding vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePrediction {
    pub vehicle_id: VehicleId,
    pub p_tp: f64,
    pub p_fn: f64,
    pub distance: f64,
}

impl NodePrediction {
    pub fn label(&self, threshold: f64) -> DetectionLabel {
        if self.p_fn >= threshold {
            DetectionLabel::FalseNegative
        } else {
            DetectionLabel::TruePositive
        }
    }
}

/// Row-compressed view of a propagation matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SparseRows {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub(crate) fn from_dense(a: &Matrix) -> Self {
        let mut row_start = Vec::with_capacity(a.rows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for i in 0..a.rows() {
            for (j, &v) in a.row(i).iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_start.push(cols.len());
        }
        SparseRows { row_start, cols, vals }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[i]..self.row_start[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `out = (1 - alpha) * A z + alpha * h`.
    fn step(&self, z: &Matrix, h: &Matrix, alpha: f64, out: &mut Matrix) {
        let keep = 1.0 - alpha;
        let d = z.cols();
        for (i, o) in out.as_mut_slice().chunks_exact_mut(d).enumerate() {
            for (oc, hc) in o.iter_mut().zip(h.row(i)) {
                *oc = alpha * hc;
            }
            for (j, a) in self.row(i) {
                let w = keep * a;
                for (oc, zc) in o.iter_mut().zip(z.row(j)) {
                    *oc += w * zc;
                }
            }
        }
    }

    /// `out += scale * A^T g`.
    fn add_transpose_product(&self, g: &Matrix, scale: f64, out: &mut Matrix) {
        for i in 0..g.rows() {
            let gi = g.row(i);
            for (j, a) in self.row(i) {
                let s = scale * a;
                for (oc, gc) in out.row_mut(j).iter_mut().zip(gi) {
                    *oc += s * gc;
                }
            }
        }
    }
}

/// Dropout multipliers (0 or `1 / (1 - rate)`) for one frame.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DropoutMasks {
    pub hidden: Matrix,
    pub embedding: Matrix,
}

impl DropoutMasks {
    pub(crate) fn sample<R: Rng + ?Sized>(n: usize, d: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || Matrix::from_fn(n, d, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
        let hidden = draw();
        let embedding = draw();
        DropoutMasks { hidden, embedding }
    }
}

/// Intermediate values of one MLP pass, kept for the backward pass.
pub(crate) struct MlpCache {
    pub pre: Matrix,
    pub hidden: Matrix,
    pub out: Matrix,
}

pub(crate) fn mlp_forward(x: &Matrix, w: &Weights, masks: Option<&DropoutMasks>) -> Result<MlpCache, ModelError> {
    let d = w.hidden_dim();
    if x.cols() != FEATURE_DIM {
        return Err(ModelError::Shape {
            name: "x",
            expected: (x.rows(), FEATURE_DIM),
            found: x.shape(),
        });
    }
    w.check_shapes(d)?;
    let n = x.rows();
    let mut pre = Matrix::zeros(n, d);
    gemm(1.0, x, Trans::No, &w.w1, Trans::No, 0.0, &mut pre);
    pre.add_row_vector(w.b1.as_slice());
    let mut hidden = pre.map(|v| v.max(0.0));
    if let Some(m) = masks {
        mul_assign(&mut hidden, &m.hidden);
    }
    let mut out = Matrix::zeros(n, d);
    gemm(1.0, &hidden, Trans::No, &w.w2, Trans::No, 0.0, &mut out);
    out.add_row_vector(w.b2.as_slice());
    if let Some(m) = masks {
        mul_assign(&mut out, &m.embedding);
    }
    Ok(MlpCache { pre, hidden, out })
}

/// `H = ReLU(X W1 + b1) W2 + b2`, inference mode.
pub fn mlp_encode(x: &Matrix, weights: &Weights) -> Result<Matrix, ModelError> {
    Ok(mlp_forward(x, weights, None)?.out)
}

/// All iterates `Z(0) = H, ..., Z(K)`.
pub(crate) fn propagate_all(h: &Matrix, a: &SparseRows, k: usize, alpha: f64) -> Vec<Matrix> {
    let mut zs = Vec::with_capacity(k + 1);
    zs.push(h.clone());
    for step in 0..k {
        let mut next = Matrix::zeros(h.rows(), h.cols());
        a.step(&zs[step], h, alpha, &mut next);
        zs.push(next);
    }
    zs
}

/// `K` power iterations of `Z <- (1 - alpha) A Z + alpha H`, starting at `H`.
pub fn appnp_propagate(h: &Matrix, a_hat: &Matrix, k: usize, alpha: f64) -> Matrix {
    let sparse = SparseRows::from_dense(a_hat);
    let mut z = h.clone();
    let mut next = Matrix::zeros(h.rows(), h.cols());
    for _ in 0..k {
        sparse.step(&z, h, alpha, &mut next);
        core::mem::swap(&mut z, &mut next);
    }
    z
}

/// Closed-form limit `alpha (I - (1 - alpha) A)^-1 H` of [`appnp_propagate`].
pub fn ppnp_exact(h: &Matrix, a_hat: &Matrix, alpha: f64) -> Result<Matrix, ModelError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ModelError::Hyper(alloc::format!("alpha {alpha} outside (0, 1]")));
    }
    let n = a_hat.rows();
    let system = Matrix::from_fn(n, n, |i, j| {
        let eye = if i == j { 1.0 } else { 0.0 };
        eye - (1.0 - alpha) * a_hat[(i, j)]
    });
    let z = solve(&system, h)?;
    Ok(z.map(|v| alpha * v))
}

pub(crate) struct GruCache {
    pub r: Matrix,
    pub gate: Matrix,
    pub cand: Matrix,
    pub rh: Matrix,
    pub out: Matrix,
}

pub(crate) fn gru_forward(z: &Matrix, h: &Matrix, w: &Weights) -> GruCache {
    let (n, d) = h.shape();
    // f(z wz + hin uh + b), activation applied in place.
    fn affine(z: &Matrix, wz: &Matrix, uh: &Matrix, hin: &Matrix, b: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
        let (n, d) = hin.shape();
        let mut p = Matrix::zeros(n, d);
        gemm(1.0, z, Trans::No, wz, Trans::No, 0.0, &mut p);
        gemm(1.0, hin, Trans::No, uh, Trans::No, 1.0, &mut p);
        for row in p.as_mut_slice().chunks_exact_mut(d) {
            for (v, bias) in row.iter_mut().zip(b.as_slice()) {
                *v = f(*v + bias);
            }
        }
        p
    }
    let r = affine(z, &w.w_r, &w.u_r, h, &w.b_r, math::sigmoid);
    let gate = affine(z, &w.w_a, &w.u_a, h, &w.b_a, math::sigmoid);
    let mut rh = r.clone();
    mul_assign(&mut rh, h);
    let cand = affine(z, &w.w_h, &w.u_h, &rh, &w.b_h, math::tanh);
    let mut out = Matrix::zeros(n, d);
    for ((o, (&a, &c)), &hv) in out
        .as_mut_slice()
        .iter_mut()
        .zip(gate.as_slice().iter().zip(cand.as_slice()))
        .zip(h.as_slice())
    {
        *o = (1.0 - a) * hv + a * c;
    }
    GruCache {
        r,
        gate,
        cand,
        rh,
        out,
    }
}

/// Per-node, per-feature gated blend of the propagated `Z` and the original
/// embedding `H`.
pub fn gru_blend(z: &Matrix, h: &Matrix, weights: &Weights) -> Result<Matrix, ModelError> {
    let d = weights.hidden_dim();
    weights.check_shapes(d)?;
    for (name, m) in [("z", z), ("h", h)] {
        if m.cols() != d || m.shape() != h.shape() {
            return Err(ModelError::Shape {
                name,
                expected: (h.rows(), d),
                found: m.shape(),
            });
        }
    }
    Ok(gru_forward(z, h, weights).out)
}

/// Linear decoder to two logits per node (TP, FN).
pub fn decode(y: &Matrix, weights: &Weights) -> Matrix {
    let mut logits = Matrix::zeros(y.rows(), 2);
    gemm(1.0, y, Trans::No, &weights.w_d, Trans::No, 0.0, &mut logits);
    logits.add_row_vector(weights.b_d.as_slice());
    logits
}

/// Row-wise softmax over the two logits.
pub fn softmax2(logits: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(logits.rows(), 2);
    for i in 0..logits.rows() {
        let (a, b) = (logits[(i, 0)], logits[(i, 1)]);
        let m = a.max(b);
        let ea = math::exp(a - m);
        let eb = math::exp(b - m);
        let s = ea + eb;
        p[(i, 0)] = ea / s;
        p[(i, 1)] = eb / s;
    }
    p
}

/// Miss probabilities for every in-range vehicle of `frame`, in graph node
/// order (nearest first). Inference mode: no dropout, deterministic.
pub fn forward(frame: &SceneFrame, params: &ModelParams, half_extent: f64) -> Result<Vec<NodePrediction>, ModelError> {
    params.validate()?;
    let graph = build_rmlos(frame, half_extent)?;
    if graph.len() <= 1 {
        return Ok(Vec::new());
    }
    let x = params.stats.normalize(&graph.feature_matrix())?;
    let a = propagation_matrix(&graph);
    let probs = run_stages(&x, &a, params)?;
    Ok(graph
        .nodes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, node)| NodePrediction {
            vehicle_id: node.id.clone(),
            p_tp: probs[(i, 0)],
            p_fn: probs[(i, 1)],
            distance: node.features.distance,
        })
        .collect())
}

/// Class probabilities for normalized features `x` and propagation matrix `a`.
pub fn run_stages(x: &Matrix, a: &Matrix, params: &ModelParams) -> Result<Matrix, ModelError> {
    let w = &params.weights;
    let h = mlp_encode(x, w)?;
    let z = appnp_propagate(&h, a, params.hyper.k, params.hyper.alpha);
    let y = gru_blend(&z, &h, w)?;
    Ok(softmax2(&decode(&y, w)))
}

pub(crate) fn mul_assign(a: &mut Matrix, b: &Matrix) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedBox, Pose2};
    use crate::scene::EgoState;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_weights(d: usize, seed: u64) -> Weights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Weights::glorot(d, &mut rng);
        for t in w.tensors_mut() {
            for v in t.as_mut_slice() {
                *v += 0.1 * (rng.random::<f64>() - 0.5);
            }
        }
        w
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let x = Matrix::from_fn(3, FEATURE_DIM, |i, j| (i + j) as f64);
        let h = mlp_encode(&x, &Weights::zeros(4)).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_pass_positive_value_through() {
        let d = FEATURE_DIM;
        let mut w = Weights::zeros(d);
        w.w1 = Matrix::identity(d);
        w.w2 = Matrix::identity(d);
        let mut x = Matrix::zeros(1, FEATURE_DIM);
        x[(0, 4)] = 2.5;
        let h = mlp_encode(&x, &w).unwrap();
        assert_eq!(h.row(0)[4], 2.5);
        assert_eq!(h.as_slice().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn mlp_matches_scalar_loops() {
        let d = 4;
        let w = random_weights(d, 3);
        let x = Matrix::from_fn(3, FEATURE_DIM, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64);
        let got = mlp_encode(&x, &w).unwrap();
        for i in 0..3 {
            let mut hidden = [0.0; 4];
            for (c, hc) in hidden.iter_mut().enumerate() {
                let mut s = w.b1[(0, c)];
                for k in 0..FEATURE_DIM {
                    s += x[(i, k)] * w.w1[(k, c)];
                }
                *hc = if s > 0.0 { s } else { 0.0 };
            }
            for c in 0..d {
                let mut s = w.b2[(0, c)];
                for (k, hk) in hidden.iter().enumerate() {
                    s += hk * w.w2[(k, c)];
                }
                assert!((got[(i, c)] - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let x = Matrix::zeros(2, 5);
        assert!(matches!(mlp_encode(&x, &Weights::zeros(4)), Err(ModelError::Shape { name: "x", .. })));
        let mut w = Weights::zeros(4);
        w.w2 = Matrix::zeros(4, 3);
        assert!(matches!(
            mlp_encode(&Matrix::zeros(1, FEATURE_DIM), &w),
            Err(ModelError::Shape { name: "w2", .. })
        ));
    }

    #[test]
    fn propagation_fixed_points() {
        let h = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]]);
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]]);
        assert_eq!(appnp_propagate(&h, &a, 7, 1.0), h);
        assert_eq!(appnp_propagate(&h, &Matrix::identity(3), 7, 0.1), h);
    }

    #[test]
    fn one_hand_computed_iteration() {
        let h = Matrix::from_rows(&[[1.0], [0.0]]);
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]);
        let z = appnp_propagate(&h, &a, 1, 0.1);
        assert!((z[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((z[(1, 0)] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn ppnp_trivial_cases() {
        let h = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        let a = Matrix::from_rows(&[[0.5, 0.5], [0.25, 0.75]]);
        assert!(ppnp_exact(&h, &a, 1.0).unwrap().max_abs_diff(&h) < 1e-15);
        assert!(ppnp_exact(&h, &Matrix::identity(2), 0.1).unwrap().max_abs_diff(&h) < 1e-12);
        assert!(ppnp_exact(&h, &a, 0.0).is_err());
    }

    #[test]
    fn gru_zero_weights_halve_h() {
        let h = Matrix::from_rows(&[[1.0, -3.0], [0.25, 8.0]]);
        let z = Matrix::from_rows(&[[5.0, 5.0], [-1.0, 2.0]]);
        let y = gru_blend(&z, &h, &Weights::zeros(2)).unwrap();
        assert_eq!(y, h.map(|v| 0.5 * v));
    }

    #[test]
    fn gru_saturated_update_gate_keeps_h() {
        let h = Matrix::from_rows(&[[1.0, -3.0], [0.25, 8.0]]);
        let z = Matrix::from_rows(&[[5.0, 5.0], [-1.0, 2.0]]);
        let mut w = Weights::zeros(2);
        w.b_a = Matrix::from_rows(&[[-1000.0, -1000.0]]);
        let y = gru_blend(&z, &h, &w).unwrap();
        assert!(y.max_abs_diff(&h) < 1e-6);
    }

    #[test]
    fn gru_matches_scalar_evaluation() {
        let w = random_weights(2, 11);
        let z = Matrix::from_rows(&[[0.3, -1.2]]);
        let h = Matrix::from_rows(&[[0.8, 0.1]]);
        let got = gru_blend(&z, &h, &w).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let lin = |wz: &Matrix, uh: &Matrix, hv: [f64; 2], b: &Matrix, c: usize| {
            z[(0, 0)] * wz[(0, c)] + z[(0, 1)] * wz[(1, c)] + hv[0] * uh[(0, c)] + hv[1] * uh[(1, c)] + b[(0, c)]
        };
        let hv = [h[(0, 0)], h[(0, 1)]];
        let r = [sig(lin(&w.w_r, &w.u_r, hv, &w.b_r, 0)), sig(lin(&w.w_r, &w.u_r, hv, &w.b_r, 1))];
        let a = [sig(lin(&w.w_a, &w.u_a, hv, &w.b_a, 0)), sig(lin(&w.w_a, &w.u_a, hv, &w.b_a, 1))];
        let rh = [r[0] * hv[0], r[1] * hv[1]];
        for c in 0..2 {
            let cand = lin(&w.w_h, &w.u_h, rh, &w.b_h, c).tanh();
            let expect = (1.0 - a[c]) * hv[c] + a[c] * cand;
            assert!((got[(0, c)] - expect).abs() < 1e-9);
        }
    }

    fn sample_frame() -> SceneFrame {
        SceneFrame::new(
            "s",
            "0",
            EgoState::new("ego", Pose2::new(1.0, 2.0, 0.3)),
            vec![
                OrientedBox::bev("a", 12.0, 4.0, 1.9, 4.6, 0.1),
                OrientedBox::bev("b", 25.0, 9.0, 2.5, 10.0, 0.2),
                OrientedBox::bev("c", -15.0, -3.0, 1.8, 4.4, 3.0),
                OrientedBox::bev("d", 40.0, 14.0, 1.8, 4.4, 0.0),
            ],
        )
    }

    #[test]
    fn zero_model_predicts_half() {
        let preds = forward(&sample_frame(), &ModelParams::zeros(Hyper { hidden_dim: 4, ..Hyper::default() }), 54.0).unwrap();
        assert_eq!(preds.len(), 4);
        for p in preds {
            assert_eq!(p.p_fn, 0.5);
            assert_eq!(p.label(0.4), DetectionLabel::FalseNegative);
        }
    }

    #[test]
    fn single_vehicle_and_empty_frames() {
        let params = ModelParams::zeros(Hyper { hidden_dim: 4, ..Hyper::default() });
        let mut frame = sample_frame();
        frame.vehicles.truncate(1);
        assert_eq!(forward(&frame, &params, 54.0).unwrap().len(), 1);
        frame.vehicles.clear();
        assert!(forward(&frame, &params, 54.0).unwrap().is_empty());
    }

    #[test]
    fn forward_equals_stage_composition() {
        let hyper = Hyper { hidden_dim: 6, ..Hyper::default() };
        let mut stats = FeatureStats::identity();
        stats.mean[8] = 20.0;
        stats.std[8] = 12.0;
        let params = ModelParams::new(random_weights(6, 5), hyper, stats).unwrap();
        let frame = sample_frame();
        let preds = forward(&frame, &params, 54.0).unwrap();

        let graph = build_rmlos(&frame, 54.0).unwrap();
        let x = params.stats.normalize(&crate::rmlos::node_features(&frame, 54.0).unwrap()).unwrap();
        let h = mlp_encode(&x, &params.weights).unwrap();
        let z = appnp_propagate(&h, &propagation_matrix(&graph), hyper.k, hyper.alpha);
        let y = gru_blend(&z, &h, &params.weights).unwrap();
        let p = softmax2(&decode(&y, &params.weights));
        for (i, pred) in preds.iter().enumerate() {
            assert_eq!(pred.p_fn.to_bits(), p[(i + 1, 1)].to_bits());
            assert!((pred.p_fn + pred.p_tp - 1.0).abs() < 1e-9);
        }
        // Repeated calls agree bitwise.
        assert_eq!(forward(&frame, &params, 54.0).unwrap(), preds);
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyper::default().validate().is_ok());
        assert!(Hyper { k: 0, ..Hyper::default() }.validate().is_err());
        assert!(Hyper { alpha: 0.0, ..Hyper::default() }.validate().is_err());
        assert!(Hyper { alpha: 1.5, ..Hyper::default() }.validate().is_err());
        assert!(Hyper { dropout: 1.0, ..Hyper::default() }.validate().is_err());
    }

    #[test]
    fn shapes_follow_hidden_dim() {
        let w = Weights::zeros(5);
        assert!(w.check_shapes(5).is_ok());
        assert!(matches!(w.check_shapes(4), Err(ModelError::Shape { name: "w1", .. })));
        assert_eq!(expected_shape("b_d", 7), (1, 2));
        assert_eq!(expected_shape("u_h", 7), (7, 7));
    }
}
