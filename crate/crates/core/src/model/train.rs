// Mini-batch training loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{param_gradients, PreparedFrame};
use super::optim::{adamw_step, AdamWConfig, AdamWState};
use super::{forward, Hyper, ModelError, ModelParams, Weights, SCHEMA_VERSION};
use crate::rmlos::{fit_feature_stats, node_features};
use crate::scene::LabeledFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Frames per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub classification_threshold: f64,
    pub hyper: Hyper,
    pub half_extent: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 70,
            batch_size: 32,
            seed: 0,
            classification_threshold: crate::DEFAULT_THRESHOLD,
            hyper: Hyper::default(),
            half_extent: crate::DEFAULT_HALF_EXTENT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.hyper.validate()?;
        let bad = |msg: &str| Err(ModelError::Config(msg.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.classification_threshold > 0.0 && self.classification_threshold < 1.0) {
            return bad("classification_threshold must lie in (0, 1)");
        }
        if !(self.half_extent > 0.0) {
            return bad("half_extent must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss (dropout active) per epoch.
    pub history: Vec<f64>,
}

/// Fits feature statistics on `dataset`, then runs AdamW for
/// `config.epochs`. Fully determined by `config.seed`.
pub fn train(dataset: &[LabeledFrame], config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let raw: Vec<_> = dataset
        .iter()
        .map(|f| node_features(&f.frame, config.half_extent))
        .collect::<Result<_, _>>()?;
    let stats = fit_feature_stats(&raw)?;
    let prepared: Vec<PreparedFrame> = dataset
        .iter()
        .map(|f| PreparedFrame::from_labeled(f, &stats, config.half_extent))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hyper = config.hyper;
    let mut params = ModelParams {
        weights: Weights::glorot(hyper.hidden_dim, &mut rng),
        hyper,
        stats,
        schema_version: SCHEMA_VERSION,
    };
    let opt = AdamWConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::new(hyper.hidden_dim);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch: Vec<PreparedFrame> = Vec::with_capacity(config.batch_size);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut node_sum = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| prepared[i].clone()));
            let nodes: usize = batch.iter().map(PreparedFrame::labeled_count).sum();
            let dropout_seed = rng.next_u64();
            if nodes == 0 {
                continue;
            }
            let (loss, grads) = param_gradients(&batch, &params, Some(dropout_seed))?;
            adamw_step(&mut params.weights, &grads, &mut state, &opt);
            loss_sum += loss * nodes as f64;
            node_sum += nodes;
        }
        history.push(if node_sum == 0 { 0.0 } else { loss_sum / node_sum as f64 });
    }
    Ok(TrainOutcome { params, history })
}

/// Miss probabilities and labels for every labeled in-range vehicle, in
/// frame order then graph order. Used for evaluation.
pub fn predict_labeled(
    params: &ModelParams,
    frames: &[LabeledFrame],
    half_extent: f64,
) -> Result<(Vec<f64>, Vec<crate::scene::DetectionLabel>), ModelError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for f in frames {
        for p in forward(&f.frame, params, half_extent)? {
            if let Some(&l) = f.labels.get(&p.vehicle_id) {
                scores.push(p.p_fn);
                labels.push(l);
            }
        }
    }
    Ok((scores, labels))
}
