//! Evaluation metrics. FN (label 1) is the positive class throughout.

use alloc::vec;
use alloc::vec::Vec;

use crate::baselines::{bucket_of, BaselineError, DropoutTable};
use crate::math;
use crate::scene::DetectionLabel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("both classes are required, got {positives} FN and {negatives} TP")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("threshold {0} must lie in [0, 1]")]
    Threshold(f64),
    #[error("sample {which} has {len} values, at least 2 are required")]
    SampleTooSmall { which: char, len: usize },
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("bucket {index} ({lower} m, {upper} m] has no observations")]
    EmptyBucket { index: usize, lower: f64, upper: f64 },
    #[error(transparent)]
    Table(#[from] BaselineError),
}

fn check_inputs(scores: &[f64], labels: &[DetectionLabel]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}

// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn class_counts(labels: &[DetectionLabel]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_missed()).count();
    (pos, labels.len() - pos)
}

/// Probability that a random FN outscores a random TP, ties counting half.
pub fn roc_auc(scores: &[f64], labels: &[DetectionLabel]) -> Result<f64, MetricsError> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    // Walk from the lowest score upwards, counting negatives already passed.
    // Twice the pair count stays an exact integer.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in tie_groups(scores).iter().rev() {
        let p = group.iter().filter(|&&i| labels[i].is_missed()).count() as u128;
        let n = group.len() as u128 - p;
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC points `(false positive rate, true positive rate)` from `(0, 0)` to
/// `(1, 1)`, one per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[DetectionLabel]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in tie_groups(scores) {
        for i in group {
            if labels[i].is_missed() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline given in increasing `x`.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, accuracy and F1 with a vehicle predicted missed iff
/// `score >= threshold`. Empty denominators give 0.
pub fn classification_metrics(
    scores: &[f64],
    labels: &[DetectionLabel],
    threshold: f64,
) -> Result<ClassificationMetrics, MetricsError> {
    check_inputs(scores, labels)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Threshold(threshold));
    }
    let mut c = Confusion::default();
    for (&s, l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_missed()) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = ratio(2 * c.true_pos, 2 * c.true_pos + c.false_pos + c.false_neg);
    Ok(ClassificationMetrics {
        precision,
        recall,
        accuracy: ratio(c.true_pos + c.true_neg, scores.len()),
        f1,
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test. One-tailed tests the alternative
/// `mean(a) > mean(b)`; otherwise the p value is two-sided.
pub fn welch_t(a: &[f64], b: &[f64], one_tailed: bool) -> Result<WelchResult, MetricsError> {
    for (which, s) in [('a', a), ('b', b)] {
        if s.len() < 2 {
            return Err(MetricsError::SampleTooSmall { which, len: s.len() });
        }
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let t = (ma - mb) / math::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let upper = student_t_sf(t, df);
    let p = if one_tailed {
        upper
    } else {
        (2.0 * upper.min(1.0 - upper)).min(1.0)
    };
    Ok(WelchResult { t, df, p })
}

// Mean and unbiased variance, two passes.
fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let ss: f64 = s.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, x, y);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Regularized incomplete beta `I_x(a, b)`; `y` must equal `1 - x` and is
/// passed separately so callers can supply it without cancellation.
pub fn inc_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = math::ln_gamma(a + b) - math::ln_gamma(a) - math::ln_gamma(b) + a * math::ln(x) + b * math::ln(y);
    let front = math::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, y) / b
    }
}

// Continued fraction for the incomplete beta, modified Lentz.
fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Per-bucket FN fraction from `(distance, label)` observations.
/// Distances past the last bound count toward the last bucket.
pub fn extract_dropout_table(observations: &[(f64, DetectionLabel)], bounds: &[f64]) -> Result<DropoutTable, MetricsError> {
    // Validates the bounds before counting.
    DropoutTable::new(bounds.iter().map(|&b| (b, 0.0)).collect())?;
    let mut total = vec![0usize; bounds.len()];
    let mut missed = vec![0usize; bounds.len()];
    for &(d, l) in observations {
        let i = bucket_of(d, bounds.iter().copied());
        total[i] += 1;
        if l.is_missed() {
            missed[i] += 1;
        }
    }
    let mut buckets = Vec::with_capacity(bounds.len());
    for (i, &upper) in bounds.iter().enumerate() {
        if total[i] == 0 {
            return Err(MetricsError::EmptyBucket {
                index: i,
                lower: if i == 0 { 0.0 } else { bounds[i - 1] },
                upper,
            });
        }
        buckets.push((upper, missed[i] as f64 / total[i] as f64));
    }
    Ok(DropoutTable::new(buckets)?)
}
