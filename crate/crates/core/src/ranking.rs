//! Cross-task feature interpretability: cumulative Gini scores, average
//! ranks, top-k reports, and the combined-cutoff prescreening rule.
//!
//! The prescreen groups compounds whose values sit strictly below every rule
//! cutoff (the "safe zone"); per-class fractions of that group reproduce the
//! paper-style accounting against whole-table class totals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DescriptorTable, Scaler, TaskKind};
use crate::forest::{root_cutoff_mean, ForestModel};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("no tasks given")]
    EmptyTaskList,
    #[error("task {task}: importances length {values} != {names} feature names")]
    LengthMismatch { task: String, values: usize, names: usize },
    #[error("k must be in [1, {p}], got {k}")]
    BadK { k: usize, p: usize },
    #[error("feature {name:?} never splits any tree of any model")]
    FeatureAbsent { name: String },
    #[error("feature {name:?} not found in the table")]
    MissingColumn { name: String },
    #[error("rule features must be unique, {name:?} repeats")]
    DuplicateRuleFeature { name: String },
    #[error("prescreen fractions require a labelled classification table")]
    NotClassification,
    #[error("prescreen fractions require both classes present")]
    SingleClass,
}

/// One task's normalized importances over its named features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskImportance {
    pub task_name: String,
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
}

impl TaskImportance {
    fn validate(&self) -> Result<(), RankingError> {
        if self.feature_names.len() != self.importances.len() {
            return Err(RankingError::LengthMismatch {
                task: self.task_name.clone(),
                values: self.importances.len(),
                names: self.feature_names.len(),
            });
        }
        Ok(())
    }
}

/// Ordered (feature, cutoff) pairs; a compound is in the safe zone iff its
/// value is strictly below the cutoff for every listed feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntry {
    pub feature: String,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CutoffRule {
    pub entries: Vec<CutoffEntry>,
}

impl CutoffRule {
    pub fn new(entries: Vec<CutoffEntry>) -> Result<Self, RankingError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.feature.as_str()) {
                return Err(RankingError::DuplicateRuleFeature { name: e.feature.clone() });
            }
        }
        Ok(Self { entries })
    }
}

/// Shared feature universe in first-seen order; each task's importances
/// expanded onto it (absent features contribute 0).
fn universe(tasks: &[TaskImportance]) -> Result<(Vec<String>, Vec<Vec<f64>>), RankingError> {
    if tasks.is_empty() {
        return Err(RankingError::EmptyTaskList);
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for task in tasks {
        task.validate()?;
        for name in &task.feature_names {
            if !index.contains_key(name) {
                index.insert(name.clone(), names.len());
                names.push(name.clone());
            }
        }
    }
    let expanded = tasks
        .iter()
        .map(|task| {
            let mut row = vec![0.0; names.len()];
            for (name, &v) in task.feature_names.iter().zip(&task.importances) {
                row[index[name]] += v;
            }
            row
        })
        .collect();
    Ok((names, expanded))
}

/// Elementwise sum of importances across tasks over the shared universe.
pub fn cumulative_gini(tasks: &[TaskImportance]) -> Result<(Vec<String>, Vec<f64>), RankingError> {
    let (names, expanded) = universe(tasks)?;
    let mut total = vec![0.0; names.len()];
    for row in &expanded {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    Ok((names, total))
}

fn ordinal_ranks(values: &[f64]) -> Vec<f64> {
    // rank 1 = largest; ties broken by ascending feature index
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("finite importances")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; values.len()];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = (rank + 1) as f64;
    }
    ranks
}

/// Mean ordinal rank per feature across tasks (rank 1 = most important).
pub fn average_rank(tasks: &[TaskImportance]) -> Result<(Vec<String>, Vec<f64>), RankingError> {
    let (names, expanded) = universe(tasks)?;
    let mut sums = vec![0.0; names.len()];
    for row in &expanded {
        for (s, r) in sums.iter_mut().zip(ordinal_ranks(row)) {
            *s += r;
        }
    }
    let k = tasks.len() as f64;
    sums.iter_mut().for_each(|s| *s /= k);
    Ok((names, sums))
}

/// One row of the ranking report.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    pub feature: String,
    pub cumulative_gini: f64,
    pub average_rank: f64,
}

/// Top-k features by descending cumulative score (ties by universe index),
/// each with its cumulative score and average rank.
pub fn top_k(tasks: &[TaskImportance], k: usize) -> Result<Vec<RankedFeature>, RankingError> {
    let (names, cumulative) = cumulative_gini(tasks)?;
    let (_, avg_ranks) = average_rank(tasks)?;
    if k < 1 || k > names.len() {
        return Err(RankingError::BadK { k, p: names.len() });
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        cumulative[b]
            .partial_cmp(&cumulative[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    Ok(order[..k]
        .iter()
        .map(|&i| RankedFeature {
            feature: names[i].clone(),
            cumulative_gini: cumulative[i],
            average_rank: avg_ranks[i],
        })
        .collect())
}

/// A fitted ranking forest with the names of its columns. When the forest
/// was fit on z-scored data, its scaler maps split cutoffs back to raw
/// descriptor units.
pub struct ForestTask<'a> {
    pub model: &'a ForestModel,
    pub feature_names: &'a [String],
    pub scaler: Option<&'a Scaler>,
}

impl ForestTask<'_> {
    fn cutoff_for(&self, name: &str) -> Option<f64> {
        let idx = self.feature_names.iter().position(|n| n == name)?;
        let cutoff = root_cutoff_mean(self.model, idx)?;
        Some(match self.scaler {
            Some(s) => cutoff * s.stds[idx] + s.means[idx],
            None => cutoff,
        })
    }
}

/// Builds a combined rule: per feature, the shallowest-split cutoff means are
/// averaged over the models that use the feature; a feature absent from every
/// model is an error.
pub fn build_cutoff_rule(
    tasks: &[ForestTask<'_>],
    features: &[String],
) -> Result<CutoffRule, RankingError> {
    if tasks.is_empty() {
        return Err(RankingError::EmptyTaskList);
    }
    let mut entries = Vec::with_capacity(features.len());
    for name in features {
        let cutoffs: Vec<f64> = tasks.iter().filter_map(|t| t.cutoff_for(name)).collect();
        if cutoffs.is_empty() {
            return Err(RankingError::FeatureAbsent { name: name.clone() });
        }
        entries.push(CutoffEntry {
            feature: name.clone(),
            cutoff: cutoffs.iter().sum::<f64>() / cutoffs.len() as f64,
        });
    }
    CutoffRule::new(entries)
}

/// Prescreen verdict for one compound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrescreenCall {
    SafeZone,
    Suspect,
}

impl std::fmt::Display for PrescreenCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrescreenCall::SafeZone => write!(f, "safe_zone"),
            PrescreenCall::Suspect => write!(f, "suspect"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrescreenDecision {
    pub call: PrescreenCall,
    /// A rule feature value was non-finite; such compounds are Suspect.
    pub missing_value: bool,
}

/// Classifies one compound's rule-aligned values: SafeZone iff strictly below
/// every cutoff. Non-finite values fail the comparison and flag the row.
pub fn prescreen_classify(values: &[f64], rule: &CutoffRule) -> PrescreenDecision {
    let mut missing = false;
    let mut safe = true;
    for (v, entry) in values.iter().zip(&rule.entries) {
        if !v.is_finite() {
            missing = true;
            safe = false;
        } else if !(*v < entry.cutoff) {
            safe = false;
        }
    }
    PrescreenDecision {
        call: if safe { PrescreenCall::SafeZone } else { PrescreenCall::Suspect },
        missing_value: missing,
    }
}

/// Per-compound prescreen calls for a whole table (columns matched by name).
pub fn prescreen_table(
    table: &DescriptorTable,
    rule: &CutoffRule,
) -> Result<Vec<PrescreenDecision>, RankingError> {
    let columns: Vec<usize> = rule
        .entries
        .iter()
        .map(|e| {
            table
                .feature_names
                .iter()
                .position(|n| n == &e.feature)
                .ok_or_else(|| RankingError::MissingColumn { name: e.feature.clone() })
        })
        .collect::<Result<_, _>>()?;
    Ok((0..table.n_rows())
        .map(|i| {
            let values: Vec<f64> = columns.iter().map(|&j| table.matrix[(i, j)]).collect();
            prescreen_classify(&values, rule)
        })
        .collect())
}

/// Fractions of each class falling in the safe zone, with whole-table class
/// totals as denominators.
pub fn prescreen_fractions(
    table: &DescriptorTable,
    rule: &CutoffRule,
) -> Result<(f64, f64), RankingError> {
    if table.task_kind != TaskKind::Classification {
        return Err(RankingError::NotClassification);
    }
    let labels = table.labels.as_deref().ok_or(RankingError::NotClassification)?;
    let n_toxic = labels.iter().filter(|&&l| l == 1.0).count();
    let n_nontoxic = labels.len() - n_toxic;
    if n_toxic == 0 || n_nontoxic == 0 {
        return Err(RankingError::SingleClass);
    }
    let decisions = prescreen_table(table, rule)?;
    let mut toxic_in = 0usize;
    let mut nontoxic_in = 0usize;
    for (decision, &label) in decisions.iter().zip(labels) {
        if decision.call == PrescreenCall::SafeZone {
            if label == 1.0 {
                toxic_in += 1;
            } else {
                nontoxic_in += 1;
            }
        }
    }
    Ok((
        toxic_in as f64 / n_toxic as f64,
        nontoxic_in as f64 / n_nontoxic as f64,
    ))
}
