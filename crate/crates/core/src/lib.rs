//! Occlusion-aware LiDAR detection modeling for traffic simulation.
//!
//! `midar-core` approximates which surrounding vehicles an ego LiDAR would
//! detect (true positive) or miss (false negative). It builds a directed
//! line-of-sight graph over the vehicles in range, encodes per-vehicle
//! features with a small MLP, diffuses them with personalized-PageRank
//! propagation, blends with a GRU gate and decodes a per-vehicle miss
//! probability.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, trajectory
//! ingestion, the CLI and the streaming service live in the `midar` crate.
//!
//! Module map:
//!
//! * [`geometry`]: oriented boxes, frame transforms, the segment/box
//!   occlusion test.
//! * [`scene`]: frames, ego state, labels and detection outcomes.
//! * [`rmlos`]: graph construction, node features, propagation matrix,
//!   feature normalization.
//! * [`model`]: the GRU-gated APPNP network, exact gradients, AdamW and
//!   the training loop.
//! * [`labeling`]: 3D IoU, Hungarian assignment and TP/FN/FP labeling.
//! * [`baselines`]: perfect detection and distance-bucketed random dropout.
//! * [`metrics`]: ROC-AUC, thresholded metrics, Welch's t-test, dropout
//!   table extraction.
//! * [`fusion`], [`height`], [`synth`]: multi-AV fusion, height regression
//!   and the synthetic scene generator.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod fusion;
pub mod geometry;
pub mod height;
pub mod labeling;
pub mod linalg;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod rmlos;
pub mod scene;
pub mod synth;

pub use geometry::{OrientedBox, Pose2, Segment2, Vec2, VehicleClass, VehicleId};
pub use linalg::Matrix;
pub use scene::{DetectionLabel, DetectionOutcome, Dims, EgoState, LabeledFrame, SceneFrame};

/// Half extent of the square detection range, in meters.
pub const DEFAULT_HALF_EXTENT: f64 = 54.0;

/// Probability threshold above which a vehicle is reported as missed.
pub const DEFAULT_THRESHOLD: f64 = 0.4;
