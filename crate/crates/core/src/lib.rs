//! Hybrid tree-ensemble / shallow-network toxicity screening.
//!
//! The pipeline ranks tabular 2D-descriptor features with an
//! extremely-randomized-trees ensemble, keeps the ones whose Gini importance
//! clears a threshold-times-mean cut, trains a small dense network on the
//! survivors, and averages four such networks into the final predictor.
//! Tree root splits double as interpretable prescreening cutoffs.

pub mod artifact;
pub mod data;
pub mod forest;
pub mod metrics;
pub mod ranking;
pub mod search;
pub mod seeding;
pub mod snn;

pub use artifact::{ArtifactError, ImportanceDump, ModelArtifact, SCHEMA};
pub use data::{
    clean_features, load_table, split_random, stratified_kfold, upsample_minority, zscore_apply,
    zscore_fit, DataError, DescriptorTable, FoldAssignment, Scaler, TaskKind,
};
pub use forest::{
    fit_forest, importances, root_cutoff_mean, root_cutoff_means, select_features, ForestError,
    ForestModel, ForestParams, ImportanceVector,
};
pub use metrics::{
    auc_pr, auc_roc, max_f1, pr_points, r2, roc_points, MetricsError, ScoredLabels,
};
pub use ranking::{
    average_rank, build_cutoff_rule, cumulative_gini, prescreen_classify, prescreen_fractions,
    prescreen_table, top_k, CutoffEntry, CutoffRule, ForestTask, PrescreenCall, RankingError,
    TaskImportance,
};
pub use search::{
    evaluate_config, parallel_optimize, series_optimize, sweep_feature_count,
    sweep_hidden_layers, sweep_n_estimators, train_final, EnsembleModel, FinalModel, Objective,
    SearchError, SeriesOutcome, SnnSearchSpace, ThresholdGrid, TrialRecord, ENSEMBLE_SIZE,
};
pub use snn::{
    init_model, train, Activation, InitMode, OutputKind, SnnError, SnnHyperparams, SnnModel,
};
