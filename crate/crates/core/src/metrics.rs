//! Ranking and regression metrics: AUC-ROC, average precision (AUC-PR),
//! maximum F1 over thresholds, R², and plot-ready curve points.
//!
//! Ties get 0.5 credit in AUC-ROC (rank-statistic convention) and are
//! processed as single threshold blocks in the precision/recall sweeps.
//! Average precision is the step-wise, non-interpolated variant.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(f64),
    #[error("metric requires both classes present")]
    SingleClass,
    #[error("metric requires at least one positive")]
    NoPositives,
    #[error("R^2 requires at least 2 points")]
    TooFew,
    #[error("R^2 undefined for constant actual values")]
    ConstantActuals,
    #[error("scores must be finite")]
    NonFiniteScore,
}

/// Scores paired with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<f64>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<f64>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
            return Err(MetricsError::BadLabel(bad));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore);
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1.0).count();
        (pos, self.labels.len() - pos)
    }

    /// Indices sorted by descending score, plus (tp, fp) running totals per
    /// tie block. Each entry is the cumulative count after consuming one
    /// whole block of equal scores.
    fn threshold_blocks(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("scores are finite")
        });
        let mut blocks = Vec::new();
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            let mut j = i;
            while j < order.len() && self.scores[order[j]] == s {
                if self.labels[order[j]] == 1.0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                j += 1;
            }
            blocks.push((s, tp, fp));
            i = j;
        }
        blocks
    }
}

/// AUC-ROC via the Mann-Whitney statistic:
/// `(concordant pairs + 0.5 * tied pairs) / (n_pos * n_neg)`.
pub fn auc_roc(sl: &ScoredLabels) -> Result<f64, MetricsError> {
    let (pos, neg) = sl.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    // Average ascending ranks, ties shared.
    let n = sl.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sl.scores[a].partial_cmp(&sl.scores[b]).expect("finite"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && sl.scores[order[j]] == sl.scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    let rank_sum_pos: f64 = (0..n).filter(|&i| sl.labels[i] == 1.0).map(|i| ranks[i]).sum();
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Step-wise average precision over descending-score threshold blocks:
/// `sum_k (R_k - R_{k-1}) * P_k`.
pub fn auc_pr(sl: &ScoredLabels) -> Result<f64, MetricsError> {
    let (pos, _) = sl.class_counts();
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in sl.threshold_blocks() {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Maximum F1 over thresholds at every unique score (classifying
/// `score >= tau` as positive); returns the max and the smallest tau
/// achieving it.
pub fn max_f1(sl: &ScoredLabels) -> Result<(f64, f64), MetricsError> {
    let (pos, _) = sl.class_counts();
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for (tau, tp, fp) in sl.threshold_blocks() {
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        // Blocks arrive in descending tau; >= keeps the smallest tie.
        if f1 >= best.0 {
            best = (f1, tau);
        }
    }
    Ok(best)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            scores: pred.len(),
            labels: actual.len(),
        });
    }
    if actual.len() < 2 {
        return Err(MetricsError::TooFew);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|&a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantActuals);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Tie-blocked ROC points ordered by FPR, starting at (0,0) and ending at
/// (1,1). The trapezoid area over these points equals [`auc_roc`].
pub fn roc_points(sl: &ScoredLabels) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (pos, neg) = sl.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut points = vec![(0.0, 0.0)];
    for (_, tp, fp) in sl.threshold_blocks() {
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Tie-blocked precision-recall points ordered by increasing recall, with a
/// leading (0, 1) anchor. The step-wise area over these points equals
/// [`auc_pr`].
pub fn pr_points(sl: &ScoredLabels) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (pos, _) = sl.class_counts();
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut points = vec![(0.0, 1.0)];
    for (_, tp, fp) in sl.threshold_blocks() {
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// Trapezoid area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Step area (rectangle rule) under threshold-block points, as used by
/// average precision.
pub fn step_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * w[1].1).sum()
}

/// Renders curve points as a two-column CSV with an `x,y` header.
pub fn points_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}
