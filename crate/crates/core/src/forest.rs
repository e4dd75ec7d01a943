//! Extremely randomized trees: per node a fixed number of candidate features
//! is drawn without replacement, each candidate gets one uniform random
//! cutoff inside the open (min, max) range of its node values, and the split
//! with the largest impurity decrease is kept. Trees grow on the full sample
//! (no bootstrap).
//!
//! The ensemble serves as a feature-ranking engine: normalized
//! mean-decrease-impurity importances drive threshold selection, and the
//! shallowest split cutoffs per feature feed the prescreening rules.

use ndarray::ArrayView2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::TaskKind;
use crate::seeding::{child_rng, Stream};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("cannot fit a forest on an empty sample")]
    EmptyInput,
    #[error("cannot fit a forest with zero feature columns")]
    NoFeatures,
    #[error("labels length {labels} does not match {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("classification labels must be 0 or 1, found {0}")]
    BadLabel(f64),
    #[error("n_estimators must be >= 1")]
    NoTrees,
    #[error("k_candidates must be in [1, {p}], got {k}")]
    BadCandidateCount { k: usize, p: usize },
    #[error("every tree is a single leaf; importances are undefined")]
    AllTreesLeaves,
    #[error("no feature importance reaches the selection cut")]
    EmptySelection,
}

/// Impurity criterion; picked from the task kind by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpurityKind {
    Gini,
    Variance,
}

/// Ensemble fitting parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// Candidate features drawn per node; `None` means round(sqrt(p)) for
    /// classification and round(p/3) for regression.
    pub k_candidates: Option<usize>,
    pub min_samples_split: usize,
    pub impurity_kind: ImpurityKind,
    pub master_seed: u64,
}

impl ForestParams {
    pub fn for_task(task: TaskKind, master_seed: u64) -> Self {
        Self {
            n_estimators: 1000,
            k_candidates: None,
            min_samples_split: 2,
            impurity_kind: match task {
                TaskKind::Classification => ImpurityKind::Gini,
                TaskKind::Regression => ImpurityKind::Variance,
            },
            master_seed,
        }
    }

    fn resolved_k(&self, p: usize) -> usize {
        let k = self.k_candidates.unwrap_or_else(|| {
            let raw = match self.impurity_kind {
                ImpurityKind::Gini => (p as f64).sqrt().round() as usize,
                ImpurityKind::Variance => ((p as f64) / 3.0).round() as usize,
            };
            raw.max(1)
        });
        k.clamp(1, p)
    }
}

/// One node of a fitted tree. Internal nodes carry a split; leaves carry the
/// training statistics used for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub feature_index: Option<usize>,
    /// Split sends `x[feature] < cutoff` to the left child; 0.0 on leaves.
    pub cutoff: f64,
    pub left: Option<Box<TreeNode>>,
    pub right: Option<Box<TreeNode>>,
    pub n_samples: usize,
    pub impurity: f64,
    /// Class-probability vector `[p0, p1]` (gini) or `[mean]` (variance).
    pub leaf_value: Vec<f64>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.feature_index.is_none()
    }
}

/// A fitted extremely-randomized-trees ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub n_features: usize,
}

/// Normalized mean-decrease-impurity importances; sums to 1 over features.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    pub values: Vec<f64>,
}

impl ImportanceVector {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Label statistics accumulated while scanning a split candidate.
#[derive(Clone, Copy)]
enum LabelStats {
    Classes { n: usize, pos: usize },
    Moments { n: usize, sum: f64, sum_sq: f64 },
}

impl LabelStats {
    fn empty(kind: ImpurityKind) -> Self {
        match kind {
            ImpurityKind::Gini => LabelStats::Classes { n: 0, pos: 0 },
            ImpurityKind::Variance => LabelStats::Moments { n: 0, sum: 0.0, sum_sq: 0.0 },
        }
    }

    fn push(&mut self, y: f64) {
        match self {
            LabelStats::Classes { n, pos } => {
                *n += 1;
                if y == 1.0 {
                    *pos += 1;
                }
            }
            LabelStats::Moments { n, sum, sum_sq } => {
                *n += 1;
                *sum += y;
                *sum_sq += y * y;
            }
        }
    }

    fn count(&self) -> usize {
        match self {
            LabelStats::Classes { n, .. } => *n,
            LabelStats::Moments { n, .. } => *n,
        }
    }

    /// Gini `1 - p0^2 - p1^2` or population variance; 0 for empty nodes.
    fn impurity(&self) -> f64 {
        match self {
            LabelStats::Classes { n, pos } => {
                if *n == 0 {
                    return 0.0;
                }
                let p1 = *pos as f64 / *n as f64;
                let p0 = 1.0 - p1;
                1.0 - p0 * p0 - p1 * p1
            }
            LabelStats::Moments { n, sum, sum_sq } => {
                if *n == 0 {
                    return 0.0;
                }
                let nf = *n as f64;
                let mean = sum / nf;
                (sum_sq / nf - mean * mean).max(0.0)
            }
        }
    }

    fn leaf_value(&self) -> Vec<f64> {
        match self {
            LabelStats::Classes { n, pos } => {
                let p1 = if *n == 0 { 0.0 } else { *pos as f64 / *n as f64 };
                vec![1.0 - p1, p1]
            }
            LabelStats::Moments { n, sum, .. } => {
                vec![if *n == 0 { 0.0 } else { sum / *n as f64 }]
            }
        }
    }
}

const MIN_IMPURITY_DECREASE: f64 = 1e-12;

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    kind: ImpurityKind,
    k: usize,
    min_samples_split: usize,
}

impl<'a> TreeBuilder<'a> {
    fn stats(&self, rows: &[usize]) -> LabelStats {
        let mut s = LabelStats::empty(self.kind);
        for &r in rows {
            s.push(self.y[r]);
        }
        s
    }

    fn build(&self, rows: &mut [usize], rng: &mut ChaCha8Rng) -> TreeNode {
        let stats = self.stats(rows);
        let impurity = stats.impurity();
        let leaf = |stats: &LabelStats, impurity: f64| TreeNode {
            feature_index: None,
            cutoff: 0.0,
            left: None,
            right: None,
            n_samples: stats.count(),
            impurity,
            leaf_value: stats.leaf_value(),
        };
        if rows.len() < self.min_samples_split || impurity <= MIN_IMPURITY_DECREASE {
            return leaf(&stats, impurity);
        }

        let p = self.x.ncols();
        let mut best: Option<(usize, f64, f64)> = None; // (feature, cutoff, decrease)
        let consider = |f: usize, rng: &mut ChaCha8Rng, best: &mut Option<(usize, f64, f64)>| {
            let (min, max) = column_range(&self.x, rows, f);
            if !(min < max) {
                return false; // constant at this node
            }
            if let Some((cutoff, decrease)) = self.evaluate(rows, f, min, max, impurity, rng) {
                match best {
                    Some((_, _, d)) if *d >= decrease => {}
                    _ => *best = Some((f, cutoff, decrease)),
                }
            }
            true
        };
        // Draw distinct candidate features without replacement; features that
        // are constant at the node do not count toward k and are redrawn from
        // the remaining pool. A deterministic exhaustive sweep takes over if
        // rejection sampling stalls (nearly-exhausted pool).
        let mut drawn: Vec<usize> = Vec::with_capacity(self.k);
        let mut found = 0usize;
        let mut attempts = 0usize;
        while found < self.k && drawn.len() < p && attempts < 2 * p + 16 {
            attempts += 1;
            let f = rng.gen_range(0..p);
            if drawn.contains(&f) {
                continue;
            }
            drawn.push(f);
            if consider(f, rng, &mut best) {
                found += 1;
            }
        }
        if found < self.k && drawn.len() < p {
            for f in 0..p {
                if found >= self.k {
                    break;
                }
                if drawn.contains(&f) {
                    continue;
                }
                if consider(f, rng, &mut best) {
                    found += 1;
                }
            }
        }

        let Some((feature, cutoff, _)) = best else {
            return leaf(&stats, impurity);
        };

        let split_at = partition_rows(&self.x, rows, feature, cutoff);
        let (left_rows, right_rows) = rows.split_at_mut(split_at);
        let left = self.build(left_rows, rng);
        let right = self.build(right_rows, rng);
        TreeNode {
            feature_index: Some(feature),
            cutoff,
            n_samples: stats.count(),
            impurity,
            leaf_value: stats.leaf_value(),
            left: Some(Box::new(left)),
            right: Some(Box::new(right)),
        }
    }

    /// Draws one uniform cutoff in the open interval and scores the split.
    /// Returns `None` when the split would not strictly decrease impurity.
    fn evaluate(
        &self,
        rows: &[usize],
        feature: usize,
        min: f64,
        max: f64,
        parent_impurity: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<(f64, f64)> {
        let mut cutoff = f64::NAN;
        for _ in 0..8 {
            let u: f64 = rng.gen();
            let c = min + u * (max - min);
            if c > min && c < max {
                cutoff = c;
                break;
            }
        }
        if cutoff.is_nan() {
            // min and max are adjacent floats; no representable strict cutoff
            return None;
        }
        let mut left = LabelStats::empty(self.kind);
        let mut right = LabelStats::empty(self.kind);
        for &r in rows {
            if self.x[(r, feature)] < cutoff {
                left.push(self.y[r]);
            } else {
                right.push(self.y[r]);
            }
        }
        let n = rows.len() as f64;
        let weighted = (left.count() as f64 / n) * left.impurity()
            + (right.count() as f64 / n) * right.impurity();
        let decrease = parent_impurity - weighted;
        (decrease > MIN_IMPURITY_DECREASE).then_some((cutoff, decrease))
    }
}

fn column_range(x: &ArrayView2<'_, f64>, rows: &[usize], feature: usize) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &r in rows {
        let v = x[(r, feature)];
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    (min, max)
}

/// In-place partition of `rows` by `x[r, feature] < cutoff`; returns the
/// boundary index.
fn partition_rows(x: &ArrayView2<'_, f64>, rows: &mut [usize], feature: usize, cutoff: f64) -> usize {
    let mut next = 0usize;
    for i in 0..rows.len() {
        if x[(rows[i], feature)] < cutoff {
            rows.swap(next, i);
            next += 1;
        }
    }
    next
}

/// Fits an ensemble of extremely randomized trees on the full sample. Tree
/// `i` runs on a child seed derived from `(master_seed, i)`, so the forest is
/// reproducible regardless of worker count.
pub fn fit_forest<'a>(
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    params: &ForestParams,
) -> Result<ForestModel, ForestError> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(ForestError::EmptyInput);
    }
    if p == 0 {
        return Err(ForestError::NoFeatures);
    }
    if y.len() != n {
        return Err(ForestError::LabelMismatch { labels: y.len(), rows: n });
    }
    if params.n_estimators == 0 {
        return Err(ForestError::NoTrees);
    }
    if let Some(k) = params.k_candidates {
        if k == 0 || k > p {
            return Err(ForestError::BadCandidateCount { k, p });
        }
    }
    if params.impurity_kind == ImpurityKind::Gini {
        if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(ForestError::BadLabel(bad));
        }
    }

    let builder = TreeBuilder {
        x,
        y,
        kind: params.impurity_kind,
        k: params.resolved_k(p),
        min_samples_split: params.min_samples_split.max(2),
    };
    let trees: Vec<TreeNode> = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(params.master_seed, Stream::Tree, i as u64);
            let mut rows: Vec<usize> = (0..n).collect();
            builder.build(&mut rows, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        params: params.clone(),
        n_features: p,
    })
}

fn accumulate_decrease(node: &TreeNode, n_total: f64, acc: &mut [f64]) {
    if let (Some(f), Some(left), Some(right)) = (node.feature_index, &node.left, &node.right) {
        let n = node.n_samples as f64;
        let weighted = (left.n_samples as f64 / n) * left.impurity
            + (right.n_samples as f64 / n) * right.impurity;
        acc[f] += (n / n_total) * (node.impurity - weighted);
        accumulate_decrease(left, n_total, acc);
        accumulate_decrease(right, n_total, acc);
    }
}

/// Mean-decrease-impurity importances: per tree the weighted impurity
/// decreases are normalized to sum 1 (single-leaf trees are skipped), the
/// per-tree vectors are averaged, and the average is re-normalized.
pub fn importances(model: &ForestModel) -> Result<ImportanceVector, ForestError> {
    let p = model.n_features;
    let mut mean = vec![0.0f64; p];
    let mut contributing = 0usize;
    let mut per_tree = vec![0.0f64; p];
    for tree in &model.trees {
        per_tree.iter_mut().for_each(|v| *v = 0.0);
        accumulate_decrease(tree, tree.n_samples as f64, &mut per_tree);
        let total: f64 = per_tree.iter().sum();
        if total <= 0.0 {
            continue;
        }
        contributing += 1;
        for (m, &v) in mean.iter_mut().zip(per_tree.iter()) {
            *m += v / total;
        }
    }
    if contributing == 0 {
        return Err(ForestError::AllTreesLeaves);
    }
    let sum: f64 = mean.iter().sum();
    for v in mean.iter_mut() {
        *v /= sum;
    }
    Ok(ImportanceVector { values: mean })
}

/// Indices of features whose importance is at least `t` times the mean
/// importance, ascending. An empty result is reported as a distinct error so
/// searches can skip the trial.
pub fn select_features(imp: &ImportanceVector, t: f64) -> Result<Vec<usize>, ForestError> {
    let cut = t * imp.mean();
    let selected: Vec<usize> = imp
        .values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v >= cut)
        .map(|(j, _)| j)
        .collect();
    if selected.is_empty() {
        return Err(ForestError::EmptySelection);
    }
    Ok(selected)
}

fn shallowest_cutoff(node: &TreeNode, feature: usize, depth: usize, best: &mut Option<(usize, f64)>) {
    if let Some(f) = node.feature_index {
        if f == feature {
            // strict < keeps the first-in-preorder node among equal depths
            if best.map_or(true, |(d, _)| depth < d) {
                *best = Some((depth, node.cutoff));
            }
        }
        shallowest_cutoff(node.left.as_ref().unwrap(), feature, depth + 1, best);
        shallowest_cutoff(node.right.as_ref().unwrap(), feature, depth + 1, best);
    }
}

/// Average over trees of the cutoff at the shallowest node splitting on
/// `feature` (ties broken first-in-preorder); `None` when no tree uses it.
pub fn root_cutoff_mean(model: &ForestModel, feature: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for tree in &model.trees {
        let mut best = None;
        shallowest_cutoff(tree, feature, 0, &mut best);
        if let Some((_, cutoff)) = best {
            sum += cutoff;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Shallowest-split cutoff means for every feature in one traversal per tree.
pub fn root_cutoff_means(model: &ForestModel) -> Vec<Option<f64>> {
    let mut sums = vec![0.0f64; model.n_features];
    let mut counts = vec![0usize; model.n_features];
    let mut best: Vec<Option<(usize, f64)>> = vec![None; model.n_features];
    fn walk(node: &TreeNode, depth: usize, best: &mut [Option<(usize, f64)>]) {
        if let Some(f) = node.feature_index {
            if best[f].map_or(true, |(d, _)| depth < d) {
                best[f] = Some((depth, node.cutoff));
            }
            walk(node.left.as_ref().unwrap(), depth + 1, best);
            walk(node.right.as_ref().unwrap(), depth + 1, best);
        }
    }
    for tree in &model.trees {
        best.iter_mut().for_each(|b| *b = None);
        walk(tree, 0, &mut best);
        for (f, b) in best.iter().enumerate() {
            if let Some((_, cutoff)) = b {
                sums[f] += cutoff;
                counts[f] += 1;
            }
        }
    }
    (0..model.n_features)
        .map(|f| (counts[f] > 0).then(|| sums[f] / counts[f] as f64))
        .collect()
}

fn tree_predict(node: &TreeNode, row: &[f64]) -> f64 {
    match node.feature_index {
        None => match node.leaf_value.len() {
            2 => node.leaf_value[1],
            _ => node.leaf_value[0],
        },
        Some(f) => {
            let child = if row[f] < node.cutoff {
                node.left.as_ref().unwrap()
            } else {
                node.right.as_ref().unwrap()
            };
            tree_predict(child, row)
        }
    }
}

impl ForestModel {
    /// Mean leaf value over trees (class-1 probability or mean target).
    /// Provided for tests and diagnostics; the forest is a selection engine,
    /// not the final classifier.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| tree_predict(t, row)).sum();
        sum / self.trees.len() as f64
    }
}
