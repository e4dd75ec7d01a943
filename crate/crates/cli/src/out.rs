//! Deterministic text rendering for the CLI's CSV and JSON outputs.
//!
//! Floats print with Rust's shortest round-trip formatting and files land via
//! temp-and-rename, so identical runs produce byte-identical outputs.

use std::path::Path;

use hybrid_screen_core::artifact::write_atomic;
use hybrid_screen_core::{Objective, SnnHyperparams, TrialRecord};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(CliError::from)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(format!("serialization failed: {e}")))?;
    s.push('\n');
    write_file(path, &s)
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// One row per trial. Wall time is deliberately not exported: identical runs
/// must produce identical files.
pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from(
        "stage,trial,threshold,hidden_layers,hidden_units,dropout,epochs,batch_size,init_mode,activation,learning_rate,n_features,fold_metrics,mean_metric,skipped\n",
    );
    for t in trials {
        let fold_metrics = t
            .fold_metrics
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let mean = t.mean_metric.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.stage,
            t.index,
            t.threshold,
            t.hp.hidden_layers,
            t.hp.hidden_units,
            t.hp.dropout,
            t.hp.epochs,
            t.hp.batch_size,
            t.hp.init_mode,
            t.hp.activation,
            t.hp.learning_rate,
            t.n_features_selected,
            fold_metrics,
            mean,
            t.skipped
        ));
    }
    out
}

/// Two-column sweep curve.
pub fn curve_csv<X: std::fmt::Display>(x_name: &str, points: &[(X, f64)]) -> String {
    let mut out = format!("{x_name},auc\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

pub fn predictions_csv(ids: &[String], scores: &[f64]) -> String {
    let mut out = String::from("compound_id,score\n");
    for (id, score) in ids.iter().zip(scores) {
        out.push_str(&format!("{},{}\n", csv_field(id), score));
    }
    out
}

/// The winning configuration written by `optimize` and consumed by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestConfig {
    pub schema: String,
    pub mode: String,
    pub objective: Objective,
    pub threshold: f64,
    pub snn: SnnHyperparams,
    pub cv_metric: f64,
    pub n_features: usize,
}

impl BestConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::data(format!("cannot read best-config {}: {e}", path.display()))
        })?;
        let best: BestConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::data(format!("invalid best-config {}: {e}", path.display()))
        })?;
        if best.schema != hybrid_screen_core::SCHEMA {
            return Err(CliError::data(format!(
                "best-config schema {:?} not supported",
                best.schema
            )));
        }
        Ok(best)
    }
}
