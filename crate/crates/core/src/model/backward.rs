// Mean cross-entropy over labeled nodes and its exact reverse-mode gradient.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    decode, gru_forward, mlp_forward, mul_assign, propagate_all, softmax2, DropoutMasks, ModelError,
    ModelParams, SparseRows, Weights, LOG_EPS,
};
use crate::linalg::{gemm, Matrix, Trans};
use crate::math;
use crate::rmlos::{build_rmlos, propagation_matrix, FeatureStats};
use crate::scene::{DetectionLabel, LabeledFrame};

/// A frame reduced to what the network consumes: normalized features,
/// propagation matrix and per-node targets (`None` for the ego and for
/// unlabeled vehicles).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub(crate) features: Matrix,
    pub(crate) propagation: SparseRows,
    pub(crate) targets: Vec<Option<DetectionLabel>>,
}

impl PreparedFrame {
    pub fn new(features: Matrix, propagation: &Matrix, targets: Vec<Option<DetectionLabel>>) -> Self {
        assert_eq!(features.rows(), targets.len());
        assert_eq!(propagation.shape(), (targets.len(), targets.len()));
        PreparedFrame {
            features,
            propagation: SparseRows::from_dense(propagation),
            targets,
        }
    }

    pub fn from_labeled(frame: &LabeledFrame, stats: &FeatureStats, half_extent: f64) -> Result<Self, ModelError> {
        let graph = build_rmlos(&frame.frame, half_extent)?;
        let features = stats.normalize(&graph.feature_matrix())?;
        let targets = graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| if i == 0 { None } else { frame.labels.get(&n.id).copied() })
            .collect();
        Ok(PreparedFrame {
            features,
            propagation: SparseRows::from_dense(&propagation_matrix(&graph)),
            targets,
        })
    }

    pub fn node_count(&self) -> usize {
        self.targets.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Mean of `-ln p(true class)` with probabilities clamped at [`LOG_EPS`].
pub fn cross_entropy(p_fn: &[f64], labels: &[DetectionLabel]) -> f64 {
    assert_eq!(p_fn.len(), labels.len());
    if p_fn.is_empty() {
        return 0.0;
    }
    let total: f64 = p_fn
        .iter()
        .zip(labels)
        .map(|(&p, &l)| node_nll(if l.is_missed() { p } else { 1.0 - p }))
        .sum();
    total / p_fn.len() as f64
}

#[inline]
fn node_nll(p_true: f64) -> f64 {
    -math::ln(p_true.max(LOG_EPS))
}

fn masks_for(batch: &[PreparedFrame], params: &ModelParams, dropout_seed: Option<u64>) -> Vec<Option<DropoutMasks>> {
    let d = params.hyper.hidden_dim;
    match dropout_seed {
        Some(seed) if params.hyper.dropout > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            batch
                .iter()
                .map(|f| Some(DropoutMasks::sample(f.node_count(), d, params.hyper.dropout, &mut rng)))
                .collect()
        }
        _ => batch.iter().map(|_| None).collect(),
    }
}

fn labeled_total(batch: &[PreparedFrame]) -> usize {
    batch.iter().map(PreparedFrame::labeled_count).sum()
}

/// Mean loss over every labeled node in the batch. With `dropout_seed` the
/// same masks as [`param_gradients`] with that seed are used.
pub fn batch_loss(batch: &[PreparedFrame], params: &ModelParams, dropout_seed: Option<u64>) -> Result<f64, ModelError> {
    params.validate()?;
    let masks = masks_for(batch, params, dropout_seed);
    let total = labeled_total(batch);
    if total == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (frame, m) in batch.iter().zip(&masks) {
        let probs = frame_probs(frame, params, m.as_ref())?;
        for (i, t) in frame.targets.iter().enumerate() {
            if let Some(label) = t {
                sum += node_nll(probs[(i, label.as_index())]);
            }
        }
    }
    Ok(sum / total as f64)
}

fn frame_probs(frame: &PreparedFrame, params: &ModelParams, masks: Option<&DropoutMasks>) -> Result<Matrix, ModelError> {
    let w = &params.weights;
    let mlp = mlp_forward(&frame.features, w, masks)?;
    let zs = propagate_all(&mlp.out, &frame.propagation, params.hyper.k, params.hyper.alpha);
    let gru = gru_forward(zs.last().expect("Z(K)"), &mlp.out, w);
    Ok(softmax2(&decode(&gru.out, w)))
}

/// Mean loss and its gradient with respect to every tensor in
/// [`Weights`], back-propagated through the decoder, the GRU gates, all `K`
/// propagation steps and the MLP.
pub fn param_gradients(
    batch: &[PreparedFrame],
    params: &ModelParams,
    dropout_seed: Option<u64>,
) -> Result<(f64, Weights), ModelError> {
    params.validate()?;
    let d = params.hyper.hidden_dim;
    let mut grads = Weights::zeros(d);
    let total = labeled_total(batch);
    if total == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / total as f64;
    let masks = masks_for(batch, params, dropout_seed);
    let mut loss = 0.0;
    for (frame, m) in batch.iter().zip(&masks) {
        loss += accumulate_frame(frame, params, m.as_ref(), scale, &mut grads)?;
    }
    Ok((loss * scale, grads))
}

// Adds `scale * d(sum of node losses)/d(weights)` for one frame into
// `grads`; returns the frame's summed loss.
fn accumulate_frame(
    frame: &PreparedFrame,
    params: &ModelParams,
    masks: Option<&DropoutMasks>,
    scale: f64,
    grads: &mut Weights,
) -> Result<f64, ModelError> {
    let w = &params.weights;
    let (k, alpha) = (params.hyper.k, params.hyper.alpha);
    let n = frame.node_count();
    let d = params.hyper.hidden_dim;

    let mlp = mlp_forward(&frame.features, w, masks)?;
    let h = &mlp.out;
    let zs = propagate_all(h, &frame.propagation, k, alpha);
    let z = zs.last().expect("Z(K)");
    let gru = gru_forward(z, h, w);
    let probs = softmax2(&decode(&gru.out, w));

    // Decoder and softmax.
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(n, 2);
    for (i, t) in frame.targets.iter().enumerate() {
        let Some(label) = t else { continue };
        let c = label.as_index();
        let p_true = probs[(i, c)];
        loss += node_nll(p_true);
        if p_true < LOG_EPS {
            continue;
        }
        for j in 0..2 {
            let onehot = if j == c { 1.0 } else { 0.0 };
            d_logits[(i, j)] = scale * (probs[(i, j)] - onehot);
        }
    }
    gemm(1.0, &gru.out, Trans::Yes, &d_logits, Trans::No, 1.0, &mut grads.w_d);
    add_col_sums(&mut grads.b_d, &d_logits);
    let mut d_y = Matrix::zeros(n, d);
    gemm(1.0, &d_logits, Trans::No, &w.w_d, Trans::Yes, 0.0, &mut d_y);

    // Y = (1 - G) H + G H~
    let mut d_h = Matrix::zeros(n, d);
    let mut d_gate_pre = Matrix::zeros(n, d);
    let mut d_cand_pre = Matrix::zeros(n, d);
    for idx in 0..n * d {
        let dy = d_y.as_slice()[idx];
        let g = gru.gate.as_slice()[idx];
        let c = gru.cand.as_slice()[idx];
        let hv = h.as_slice()[idx];
        d_h.as_mut_slice()[idx] = dy * (1.0 - g);
        d_gate_pre.as_mut_slice()[idx] = dy * (c - hv) * g * (1.0 - g);
        d_cand_pre.as_mut_slice()[idx] = dy * g * (1.0 - c * c);
    }

    // H~ = tanh(Z W_h + (R H) U_h + b_h)
    gemm(1.0, z, Trans::Yes, &d_cand_pre, Trans::No, 1.0, &mut grads.w_h);
    gemm(1.0, &gru.rh, Trans::Yes, &d_cand_pre, Trans::No, 1.0, &mut grads.u_h);
    add_col_sums(&mut grads.b_h, &d_cand_pre);
    let mut d_z = Matrix::zeros(n, d);
    gemm(1.0, &d_cand_pre, Trans::No, &w.w_h, Trans::Yes, 0.0, &mut d_z);
    let mut d_rh = Matrix::zeros(n, d);
    gemm(1.0, &d_cand_pre, Trans::No, &w.u_h, Trans::Yes, 0.0, &mut d_rh);
    let mut d_reset_pre = Matrix::zeros(n, d);
    for idx in 0..n * d {
        let drh = d_rh.as_slice()[idx];
        let r = gru.r.as_slice()[idx];
        d_h.as_mut_slice()[idx] += drh * r;
        d_reset_pre.as_mut_slice()[idx] = drh * h.as_slice()[idx] * r * (1.0 - r);
    }

    // Gates: sigmoid(Z W + H U + b)
    for (d_pre, wz, uh) in [(&d_gate_pre, &w.w_a, &w.u_a), (&d_reset_pre, &w.w_r, &w.u_r)] {
        gemm(1.0, d_pre, Trans::No, wz, Trans::Yes, 1.0, &mut d_z);
        gemm(1.0, d_pre, Trans::No, uh, Trans::Yes, 1.0, &mut d_h);
    }
    gemm(1.0, z, Trans::Yes, &d_gate_pre, Trans::No, 1.0, &mut grads.w_a);
    gemm(1.0, h, Trans::Yes, &d_gate_pre, Trans::No, 1.0, &mut grads.u_a);
    add_col_sums(&mut grads.b_a, &d_gate_pre);
    gemm(1.0, z, Trans::Yes, &d_reset_pre, Trans::No, 1.0, &mut grads.w_r);
    gemm(1.0, h, Trans::Yes, &d_reset_pre, Trans::No, 1.0, &mut grads.u_r);
    add_col_sums(&mut grads.b_r, &d_reset_pre);

    // Z(k+1) = (1 - alpha) A Z(k) + alpha H, unrolled backwards.
    let mut upstream = d_z;
    for _ in 0..k {
        for (dh, g) in d_h.as_mut_slice().iter_mut().zip(upstream.as_slice()) {
            *dh += alpha * g;
        }
        let mut prev = Matrix::zeros(n, d);
        frame.propagation.add_transpose_product(&upstream, 1.0 - alpha, &mut prev);
        upstream = prev;
    }
    // Z(0) = H
    for (dh, g) in d_h.as_mut_slice().iter_mut().zip(upstream.as_slice()) {
        *dh += g;
    }

    // MLP: H = (ReLU(X W1 + b1) M1 W2 + b2) M2
    if let Some(m) = masks {
        mul_assign(&mut d_h, &m.embedding);
    }
    gemm(1.0, &mlp.hidden, Trans::Yes, &d_h, Trans::No, 1.0, &mut grads.w2);
    add_col_sums(&mut grads.b2, &d_h);
    let mut d_hidden = Matrix::zeros(n, d);
    gemm(1.0, &d_h, Trans::No, &w.w2, Trans::Yes, 0.0, &mut d_hidden);
    if let Some(m) = masks {
        mul_assign(&mut d_hidden, &m.hidden);
    }
    for (g, &pre) in d_hidden.as_mut_slice().iter_mut().zip(mlp.pre.as_slice()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    gemm(1.0, &frame.features, Trans::Yes, &d_hidden, Trans::No, 1.0, &mut grads.w1);
    add_col_sums(&mut grads.b1, &d_hidden);

    Ok(loss)
}

fn add_col_sums(bias: &mut Matrix, g: &Matrix) {
    for (b, s) in bias.as_mut_slice().iter_mut().zip(g.column_sums()) {
        *b += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyper, TENSOR_NAMES};
    use alloc::vec;

    fn tiny_frame() -> PreparedFrame {
        let x = Matrix::from_fn(3, 9, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.05);
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]);
        PreparedFrame::new(
            x,
            &a,
            vec![None, Some(DetectionLabel::TruePositive), Some(DetectionLabel::FalseNegative)],
        )
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], &[DetectionLabel::TruePositive, DetectionLabel::FalseNegative]), 0.0);
        for l in [DetectionLabel::TruePositive, DetectionLabel::FalseNegative] {
            assert!((cross_entropy(&[0.5], &[l]) - core::f64::consts::LN_2).abs() < 1e-15);
        }
        let p = [0.2, 0.7, 0.9];
        let labels = [DetectionLabel::FalseNegative, DetectionLabel::TruePositive, DetectionLabel::FalseNegative];
        let expect = -((0.2f64).ln() + (0.3f64).ln() + (0.9f64).ln()) / 3.0;
        assert!((cross_entropy(&p, &labels) - expect).abs() < 1e-12);
        // Clamped, finite.
        assert!(cross_entropy(&[0.0], &[DetectionLabel::FalseNegative]).is_finite());
    }

    #[test]
    fn saturated_reset_gate_zeroes_u_h_gradient() {
        let hyper = Hyper { hidden_dim: 4, k: 2, ..Hyper::default() };
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(1);
        let mut params = ModelParams::zeros(hyper);
        params.weights = Weights::glorot(4, &mut rng);
        params.weights.b_r = Matrix::from_rows(&[[-1000.0; 4]]);
        let (_, g) = param_gradients(&[tiny_frame()], &params, None).unwrap();
        assert!(g.u_h.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.w_h.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let hyper = Hyper { hidden_dim: 4, k: 3, ..Hyper::default() };
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(2);
        let mut params = ModelParams::zeros(hyper);
        params.weights = Weights::glorot(4, &mut rng);
        let one = [tiny_frame()];
        let two = [tiny_frame(), tiny_frame()];
        let (l1, g1) = param_gradients(&one, &params, None).unwrap();
        let (l2, g2) = param_gradients(&two, &params, None).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (name, (a, b)) in TENSOR_NAMES.iter().zip(g1.tensors().into_iter().zip(g2.tensors())) {
            assert!(a.max_abs_diff(b) < 1e-12, "{name}");
        }
    }

    #[test]
    fn loss_matches_gradient_pass_loss() {
        let hyper = Hyper { hidden_dim: 4, ..Hyper::default() };
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(3);
        let mut params = ModelParams::zeros(hyper);
        params.weights = Weights::glorot(4, &mut rng);
        let batch = [tiny_frame()];
        for seed in [None, Some(9)] {
            let l = batch_loss(&batch, &params, seed).unwrap();
            let (lg, _) = param_gradients(&batch, &params, seed).unwrap();
            assert_eq!(l.to_bits(), lg.to_bits());
        }
    }

    #[test]
    fn unlabeled_batch_is_zero() {
        let mut f = tiny_frame();
        f.targets = vec![None; 3];
        let params = ModelParams::zeros(Hyper { hidden_dim: 4, ..Hyper::default() });
        let (l, g) = param_gradients(&[f], &params, None).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.tensors().iter().all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
    }
}
