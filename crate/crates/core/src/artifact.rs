//! Versioned JSON persistence: trained ensembles, per-task importance dumps
//! (the input to cross-task ranking), and cutoff-rule files.
//!
//! Artifacts are plain serde structs with fixed field order and
//! shortest-round-trip float formatting, so save -> load -> save is
//! byte-stable and weights reload bit-exactly.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::data::{Scaler, TaskKind};
use crate::ranking::{CutoffEntry, CutoffRule, TaskImportance};
use crate::search::EnsembleModel;
use crate::snn::{Activation, DenseLayer, OutputKind, SnnHyperparams, SnnModel};

pub const SCHEMA: &str = "hybrid-screen/1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed artifact JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {found:?}, expected {SCHEMA:?}")]
    SchemaVersion { found: String },
    #[error("inconsistent artifact: {0}")]
    Inconsistent(String),
}

fn read(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), ArtifactError> {
    let io_err = |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl WeightMatrix {
    fn from_array(a: &ndarray::Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<ndarray::Array2<f64>, ArtifactError> {
        ndarray::Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|_| ArtifactError::Inconsistent("weight matrix shape/data mismatch".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub weights: WeightMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberJson {
    pub hidden: Vec<LayerJson>,
    pub output: LayerJson,
}

fn layer_json(layer: &DenseLayer) -> LayerJson {
    LayerJson {
        weights: WeightMatrix::from_array(&layer.weights),
        bias: layer.bias.to_vec(),
    }
}

fn layer_from_json(json: &LayerJson) -> Result<DenseLayer, ArtifactError> {
    let weights = json.weights.to_array()?;
    if json.bias.len() != weights.ncols() {
        return Err(ArtifactError::Inconsistent("bias length != weight columns".into()));
    }
    Ok(DenseLayer {
        weights,
        bias: ndarray::Array1::from_vec(json.bias.clone()),
    })
}

/// Serialized trained ensemble plus everything needed to score raw tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema: String,
    pub task_kind: TaskKind,
    pub created_seed: u64,
    pub feature_names: Vec<String>,
    pub kept_columns: Vec<usize>,
    pub scaler: Scaler,
    pub selected: Vec<usize>,
    pub selected_feature_names: Vec<String>,
    pub best_threshold: f64,
    pub best_hp: SnnHyperparams,
    pub activation: Activation,
    pub output_kind: OutputKind,
    pub members: Vec<MemberJson>,
    pub cutoff_rule: Option<Vec<CutoffEntry>>,
}

impl ModelArtifact {
    pub fn from_ensemble(ensemble: &EnsembleModel, rule: Option<&CutoffRule>) -> Self {
        let selected_feature_names = ensemble
            .selected
            .iter()
            .map(|&j| ensemble.feature_names[ensemble.kept_columns[j]].clone())
            .collect();
        let first = &ensemble.members[0];
        Self {
            schema: SCHEMA.to_string(),
            task_kind: ensemble.task_kind,
            created_seed: ensemble.master_seed,
            feature_names: ensemble.feature_names.clone(),
            kept_columns: ensemble.kept_columns.clone(),
            scaler: ensemble.scaler.clone(),
            selected: ensemble.selected.clone(),
            selected_feature_names,
            best_threshold: ensemble.best_threshold,
            best_hp: ensemble.best_hp.clone(),
            activation: first.activation,
            output_kind: first.output_kind,
            members: ensemble
                .members
                .iter()
                .map(|m| MemberJson {
                    hidden: m.hidden.iter().map(layer_json).collect(),
                    output: layer_json(&m.output),
                })
                .collect(),
            cutoff_rule: rule.map(|r| r.entries.clone()),
        }
    }

    pub fn to_ensemble(&self) -> Result<(EnsembleModel, Option<CutoffRule>), ArtifactError> {
        self.validate()?;
        let input_dim = self.selected.len();
        let members = self
            .members
            .iter()
            .map(|m| {
                Ok(SnnModel {
                    hidden: m.hidden.iter().map(layer_from_json).collect::<Result<_, _>>()?,
                    output: layer_from_json(&m.output)?,
                    activation: self.activation,
                    output_kind: self.output_kind,
                    input_dim,
                })
            })
            .collect::<Result<Vec<_>, ArtifactError>>()?;
        let rule = match &self.cutoff_rule {
            Some(entries) => Some(
                CutoffRule::new(entries.clone())
                    .map_err(|e| ArtifactError::Inconsistent(e.to_string()))?,
            ),
            None => None,
        };
        Ok((
            EnsembleModel {
                members,
                scaler: self.scaler.clone(),
                kept_columns: self.kept_columns.clone(),
                selected: self.selected.clone(),
                feature_names: self.feature_names.clone(),
                task_kind: self.task_kind,
                best_threshold: self.best_threshold,
                best_hp: self.best_hp.clone(),
                master_seed: self.created_seed,
            },
            rule,
        ))
    }

    fn validate(&self) -> Result<(), ArtifactError> {
        if self.schema != SCHEMA {
            return Err(ArtifactError::SchemaVersion { found: self.schema.clone() });
        }
        let p = self.feature_names.len();
        if self.kept_columns.iter().any(|&j| j >= p) {
            return Err(ArtifactError::Inconsistent("kept_columns index out of range".into()));
        }
        let kept = self.kept_columns.len();
        if self.scaler.means.len() != kept
            || self.scaler.stds.len() != kept
            || self.scaler.constant_mask.len() != kept
        {
            return Err(ArtifactError::Inconsistent("scaler length != kept_columns".into()));
        }
        if self.selected.iter().any(|&j| j >= kept) {
            return Err(ArtifactError::Inconsistent("selected index out of range".into()));
        }
        if self.selected_feature_names.len() != self.selected.len() {
            return Err(ArtifactError::Inconsistent(
                "selected_feature_names length != selected".into(),
            ));
        }
        if self.members.is_empty() {
            return Err(ArtifactError::Inconsistent("artifact has no members".into()));
        }
        let dims = |m: &MemberJson| -> Vec<(usize, usize)> {
            m.hidden
                .iter()
                .chain(std::iter::once(&m.output))
                .map(|l| (l.weights.rows, l.weights.cols))
                .collect()
        };
        let first = dims(&self.members[0]);
        if first.first().map(|&(rows, _)| rows) != Some(self.selected.len()) {
            return Err(ArtifactError::Inconsistent(
                "member input width != selected feature count".into(),
            ));
        }
        for m in &self.members[1..] {
            if dims(m) != first {
                return Err(ArtifactError::Inconsistent("member layer shapes differ".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        let artifact: ModelArtifact = serde_json::from_str(&read(path)?)?;
        artifact.validate()?;
        Ok(artifact)
    }
}

/// Per-task feature ranking export: importances over the kept columns plus
/// raw-unit shallowest-split cutoffs where the feature is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDump {
    pub schema: String,
    pub task_name: String,
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
    pub root_cutoffs: Vec<Option<f64>>,
}

impl ImportanceDump {
    pub fn new(
        task_name: String,
        feature_names: Vec<String>,
        importances: Vec<f64>,
        root_cutoffs: Vec<Option<f64>>,
    ) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            task_name,
            feature_names,
            importances,
            root_cutoffs,
        }
    }

    pub fn as_task_importance(&self) -> TaskImportance {
        TaskImportance {
            task_name: self.task_name.clone(),
            feature_names: self.feature_names.clone(),
            importances: self.importances.clone(),
        }
    }

    fn validate(&self) -> Result<(), ArtifactError> {
        if self.schema != SCHEMA {
            return Err(ArtifactError::SchemaVersion { found: self.schema.clone() });
        }
        if self.feature_names.len() != self.importances.len()
            || self.feature_names.len() != self.root_cutoffs.len()
        {
            return Err(ArtifactError::Inconsistent(
                "importance dump field lengths differ".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut s = serde_json::to_string_pretty(self).expect("dump serializes");
        s.push('\n');
        write_atomic(path, &s)
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        let dump: ImportanceDump = serde_json::from_str(&read(path)?)?;
        dump.validate()?;
        Ok(dump)
    }
}

/// Rule files are a bare JSON list of `{feature, cutoff}` objects.
pub fn save_rule(rule: &CutoffRule, path: &Path) -> Result<(), ArtifactError> {
    let mut s = serde_json::to_string_pretty(&rule.entries).expect("rule serializes");
    s.push('\n');
    write_atomic(path, &s)
}

pub fn load_rule(path: &Path) -> Result<CutoffRule, ArtifactError> {
    let entries: Vec<CutoffEntry> = serde_json::from_str(&read(path)?)?;
    CutoffRule::new(entries).map_err(|e| ArtifactError::Inconsistent(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DescriptorTable, TaskKind};
    use crate::forest::ForestParams;
    use crate::search::train_final;
    use crate::snn::SnnHyperparams;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_ensemble() -> EnsembleModel {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60;
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let matrix = Array2::from_shape_fn((n, 4), |(i, j)| {
            if j == 1 {
                labels[i] * 2.0 - 1.0 + rng.gen::<f64>() * 0.4
            } else {
                rng.gen::<f64>()
            }
        });
        let table = DescriptorTable::new(
            (0..n).map(|i| format!("c{i}")).collect(),
            vec!["alpha".into(), "beta".into(), "gamma".into(), "delta".into()],
            matrix,
            Some(labels),
            TaskKind::Classification,
        )
        .unwrap();
        let params = ForestParams {
            n_estimators: 20,
            ..ForestParams::for_task(TaskKind::Classification, 0)
        };
        let hp = SnnHyperparams {
            epochs: 5,
            batch_size: 32,
            ..SnnHyperparams::fixed_defaults(1)
        };
        train_final(&table, 1.0, &hp, &params, 99).unwrap().ensemble
    }

    #[test]
    fn ensemble_roundtrips_bit_exactly() {
        let ensemble = trained_ensemble();
        let artifact = ModelArtifact::from_ensemble(&ensemble, None);
        let (back, rule) = artifact.to_ensemble().unwrap();
        assert_eq!(back, ensemble);
        assert!(rule.is_none());
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let ensemble = trained_ensemble();
        let rule = CutoffRule::new(vec![CutoffEntry { feature: "beta".into(), cutoff: 0.17 }])
            .unwrap();
        let artifact = ModelArtifact::from_ensemble(&ensemble, Some(&rule));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        artifact.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        loaded.save(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let (back, back_rule) = loaded.to_ensemble().unwrap();
        assert_eq!(back, ensemble);
        assert_eq!(back_rule, Some(rule));
    }

    #[test]
    fn selected_feature_names_recorded() {
        let ensemble = trained_ensemble();
        let artifact = ModelArtifact::from_ensemble(&ensemble, None);
        for (&sel, name) in artifact.selected.iter().zip(&artifact.selected_feature_names) {
            assert_eq!(
                name,
                &ensemble.feature_names[ensemble.kept_columns[sel]]
            );
        }
        // the planted column must be among them
        assert!(artifact.selected_feature_names.iter().any(|n| n == "beta"));
    }

    #[test]
    fn corrupted_artifacts_are_rejected_with_diagnostics() {
        let ensemble = trained_ensemble();
        let mut artifact = ModelArtifact::from_ensemble(&ensemble, None);
        artifact.schema = "hybrid-screen/99".into();
        assert!(matches!(
            artifact.validate().unwrap_err(),
            ArtifactError::SchemaVersion { found } if found == "hybrid-screen/99"
        ));

        let mut artifact = ModelArtifact::from_ensemble(&ensemble, None);
        artifact.scaler.means.pop();
        let err = artifact.validate().unwrap_err();
        assert!(err.to_string().contains("scaler"));

        let mut artifact = ModelArtifact::from_ensemble(&ensemble, None);
        artifact.members[2].output.bias = vec![0.0, 0.0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_atomic(&path, &artifact.to_json()).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        match loaded.to_ensemble() {
            Err(ArtifactError::Inconsistent(msg)) => assert!(msg.contains("bias")),
            other => panic!("expected inconsistency, got {other:?}"),
        }

        // truncated JSON
        write_atomic(&path, "{\"schema\": \"hybrid-screen/1\"").unwrap();
        assert!(matches!(
            ModelArtifact::load(&path).unwrap_err(),
            ArtifactError::Json(_)
        ));
    }

    #[test]
    fn importance_dump_roundtrip() {
        let dump = ImportanceDump::new(
            "AM".into(),
            vec!["piPC10".into(), "piPC9".into()],
            vec![0.7, 0.3],
            vec![Some(5.29), None],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("importances.json");
        dump.save(&path).unwrap();
        let back = ImportanceDump::load(&path).unwrap();
        assert_eq!(back, dump);
        let task = back.as_task_importance();
        assert_eq!(task.task_name, "AM");
        assert_eq!(task.importances, vec![0.7, 0.3]);
    }

    #[test]
    fn rule_files_are_bare_entry_lists() {
        let rule = CutoffRule::new(vec![
            CutoffEntry { feature: "piPC10".into(), cutoff: 5.29 },
            CutoffEntry { feature: "piPC9".into(), cutoff: 5.10 },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rule.json");
        save_rule(&rule, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.trim_start().starts_with('['));
        let back = load_rule(&path).unwrap();
        assert_eq!(back, rule);
    }
}
