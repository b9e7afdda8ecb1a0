//! Linear vehicle-height model for trajectory data that lacks heights.

use alloc::vec::Vec;

use crate::geometry::OrientedBox;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeightError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("design matrix is rank deficient (lengths and widths are collinear)")]
    RankDeficient,
}

/// `height = a * length + b * width + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HeightModel {
    /// Fitted on `crates/midar/data/vehicle_dims_sample.csv`, 30 cars,
    /// vans, trucks and buses. Refit with `midar fit-height` on real data.
    pub const DEFAULT: HeightModel = HeightModel {
        a: 0.06759925877200336,
        b: 2.069468376679235,
        c: -2.496681060715454,
    };

    pub fn predict(&self, length: f64, width: f64) -> f64 {
        self.a * length + self.b * width + self.c
    }

    /// Fills in the height (and ground-resting center) of a box whose height
    /// is zero. Predictions below zero are clamped.
    pub fn fill(&self, b: &mut OrientedBox) {
        if b.height == 0.0 {
            b.height = self.predict(b.length, b.width).max(0.0);
            b.cz = 0.5 * b.height;
        }
    }
}

impl Default for HeightModel {
    fn default() -> Self {
        HeightModel::DEFAULT
    }
}

/// Least squares over `(length, width, height)` samples via Householder QR.
pub fn fit_height_regression(samples: &[(f64, f64, f64)]) -> Result<HeightModel, HeightError> {
    let n = samples.len();
    if n < 3 {
        return Err(HeightError::TooFewSamples(n));
    }
    if let Some(i) = samples
        .iter()
        .position(|s| !(s.0.is_finite() && s.1.is_finite() && s.2.is_finite()))
    {
        return Err(HeightError::NonFinite(i));
    }
    // Column-major design [length, width, 1] and right-hand side.
    let mut cols: [Vec<f64>; 3] = [
        samples.iter().map(|s| s.0).collect(),
        samples.iter().map(|s| s.1).collect(),
        alloc::vec![1.0; n],
    ];
    let mut rhs: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let norms: [f64; 3] = core::array::from_fn(|j| norm(&cols[j]));
    let scale = norms.iter().copied().fold(0.0, f64::max);

    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let alpha = {
            let x = &cols[k][k..];
            let nx = norm(x);
            if x[0] > 0.0 {
                -nx
            } else {
                nx
            }
        };
        if alpha.abs() <= 1e-10 * scale {
            return Err(HeightError::RankDeficient);
        }
        // v = x - alpha e1, normalized implicitly through vtv.
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        for col in cols.iter_mut().skip(k) {
            reflect(&v, vtv, &mut col[k..]);
        }
        reflect(&v, vtv, &mut rhs[k..]);
        for (j, col) in cols.iter().enumerate().skip(k) {
            r[k][j] = col[k];
        }
    }
    let mut beta = [0.0; 3];
    for k in (0..3).rev() {
        let tail: f64 = (k + 1..3).map(|j| r[k][j] * beta[j]).sum();
        beta[k] = (rhs[k] - tail) / r[k][k];
    }
    Ok(HeightModel {
        a: beta[0],
        b: beta[1],
        c: beta[2],
    })
}

fn norm(x: &[f64]) -> f64 {
    math::sqrt(x.iter().map(|v| v * v).sum())
}

fn reflect(v: &[f64], vtv: f64, x: &mut [f64]) {
    if vtv == 0.0 {
        return;
    }
    let f = 2.0 * v.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() / vtv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}
