//! Run configuration: JSON schema, validation, and table loading.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use hybrid_screen_core::{
    load_table, split_random, DescriptorTable, ForestParams, Objective, SnnHyperparams,
    SnnSearchSpace, TaskKind, ThresholdGrid,
};

use crate::CliError;

/// Where the train/CV/test tables come from: either pre-split files or one
/// file plus split fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Files {
        train: PathBuf,
        cv: Option<PathBuf>,
        test: Option<PathBuf>,
    },
    Single {
        file: PathBuf,
        fractions: (f64, f64, f64),
    },
}

/// Partial override of the network defaults used outside the random search.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnOverride {
    pub hidden_layers: Option<usize>,
    pub hidden_units: Option<usize>,
    pub dropout: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub init_mode: Option<hybrid_screen_core::InitMode>,
    pub activation: Option<hybrid_screen_core::Activation>,
    pub learning_rate: Option<f64>,
}

impl SnnOverride {
    pub fn apply(&self, base: SnnHyperparams) -> SnnHyperparams {
        SnnHyperparams {
            hidden_layers: self.hidden_layers.unwrap_or(base.hidden_layers),
            hidden_units: self.hidden_units.unwrap_or(base.hidden_units),
            dropout: self.dropout.unwrap_or(base.dropout),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            init_mode: self.init_mode.unwrap_or(base.init_mode),
            activation: self.activation.unwrap_or(base.activation),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            seed: base.seed,
        }
    }
}

/// Partial override of the random-search space.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceOverride {
    pub epochs: Option<Vec<usize>>,
    pub dropout: Option<Vec<f64>>,
    pub batch_size: Option<Vec<usize>>,
    pub init_mode: Option<Vec<hybrid_screen_core::InitMode>>,
    pub activation: Option<Vec<hybrid_screen_core::Activation>>,
    pub n_iter: Option<usize>,
}

impl SpaceOverride {
    pub fn apply(&self, base: SnnSearchSpace) -> SnnSearchSpace {
        SnnSearchSpace {
            epochs: self.epochs.clone().unwrap_or(base.epochs),
            dropout: self.dropout.clone().unwrap_or(base.dropout),
            batch_size: self.batch_size.clone().unwrap_or(base.batch_size),
            init_mode: self.init_mode.clone().unwrap_or(base.init_mode),
            activation: self.activation.clone().unwrap_or(base.activation),
            n_iter: self.n_iter.unwrap_or(base.n_iter),
        }
    }
}

/// Partial override of the forest parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestOverride {
    pub n_estimators: Option<usize>,
    pub k_candidates: Option<usize>,
    pub min_samples_split: Option<usize>,
}

impl ForestOverride {
    pub fn apply(&self, base: ForestParams) -> ForestParams {
        ForestParams {
            n_estimators: self.n_estimators.unwrap_or(base.n_estimators),
            k_candidates: self.k_candidates.or(base.k_candidates),
            min_samples_split: self.min_samples_split.unwrap_or(base.min_samples_split),
            ..base
        }
    }
}

/// Case-study sweep settings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_estimators: Option<Vec<usize>>,
    pub depths: Option<Vec<usize>>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<String>,
    pub task_kind: TaskKind,
    pub data: DataSpec,
    pub id_column: Option<String>,
    pub label_column: Option<String>,
    pub seed: Option<u64>,
    pub objective: Option<Objective>,
    pub mode: Option<String>,
    pub folds: Option<usize>,
    pub threshold_grid: Option<Vec<f64>>,
    pub dropout_grid: Option<Vec<f64>>,
    pub snn: Option<SnnOverride>,
    pub snn_space: Option<SpaceOverride>,
    pub forest: Option<ForestOverride>,
    pub sweep: Option<SweepConfig>,
    pub rule_features: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        if let Some(schema) = &config.schema {
            if schema != hybrid_screen_core::SCHEMA {
                return Err(CliError::config(format!(
                    "config schema {schema:?} not supported (expected {:?})",
                    hybrid_screen_core::SCHEMA
                )));
            }
        }
        if let DataSpec::Single { fractions, .. } = &config.data {
            let sum = fractions.0 + fractions.1 + fractions.2;
            if fractions.0 <= 0.0 || fractions.1 <= 0.0 || fractions.2 <= 0.0
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(CliError::config(
                    "split fractions must be positive and sum to 1".into(),
                ));
            }
        }
        Ok(config)
    }

    /// Seeds are mandatory: flag wins, config second, no wall-clock default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.seed)
            .ok_or_else(|| CliError::config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn id_column(&self) -> &str {
        self.id_column.as_deref().unwrap_or("Name")
    }

    pub fn label_column(&self) -> Result<&str, CliError> {
        self.label_column
            .as_deref()
            .ok_or_else(|| CliError::config("config is missing `label_column`".into()))
    }

    pub fn objective(&self) -> Objective {
        self.objective.unwrap_or(Objective::default_for(self.task_kind))
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(5)
    }

    pub fn threshold_grid(&self) -> ThresholdGrid {
        match &self.threshold_grid {
            Some(multipliers) => ThresholdGrid { multipliers: multipliers.clone() },
            None => ThresholdGrid::default(),
        }
    }

    pub fn dropout_grid(&self) -> Vec<f64> {
        self.dropout_grid
            .clone()
            .unwrap_or_else(|| SnnSearchSpace::default().dropout)
    }

    pub fn snn_space(&self) -> SnnSearchSpace {
        self.snn_space
            .clone()
            .unwrap_or_default()
            .apply(SnnSearchSpace::default())
    }

    pub fn snn_defaults(&self, seed: u64) -> SnnHyperparams {
        self.snn
            .clone()
            .unwrap_or_default()
            .apply(SnnHyperparams::fixed_defaults(seed))
    }

    pub fn forest_params(&self, seed: u64) -> ForestParams {
        self.forest
            .clone()
            .unwrap_or_default()
            .apply(ForestParams::for_task(self.task_kind, seed))
    }

    fn load_one(&self, path: &Path, with_labels: bool) -> Result<DescriptorTable, CliError> {
        let label = if with_labels { Some(self.label_column()?) } else { None };
        load_table(path, self.id_column(), label, self.task_kind).map_err(CliError::from)
    }

    /// Merged train+CV table (the optimization/final-training input).
    pub fn load_train_cv(&self, seed: u64) -> Result<DescriptorTable, CliError> {
        match &self.data {
            DataSpec::Files { train, cv, .. } => {
                let train = self.load_one(train, true)?;
                match cv {
                    Some(cv) => {
                        let cv = self.load_one(cv, true)?;
                        let cv = align_columns(&cv, &train.feature_names)?;
                        train.concat_rows(&cv).map_err(CliError::from)
                    }
                    None => Ok(train),
                }
            }
            DataSpec::Single { file, fractions } => {
                let table = self.load_one(file, true)?;
                let (train, cv, _) = split_random(&table, *fractions, seed)?;
                train.concat_rows(&cv).map_err(CliError::from)
            }
        }
    }

    /// Held-out test table (re-derives the split for single-file specs).
    pub fn load_test(&self, seed: u64) -> Result<DescriptorTable, CliError> {
        match &self.data {
            DataSpec::Files { test, .. } => match test {
                Some(test) => self.load_one(test, true),
                None => Err(CliError::config("config data spec has no `test` path".into())),
            },
            DataSpec::Single { file, fractions } => {
                let table = self.load_one(file, true)?;
                let (_, _, test) = split_random(&table, *fractions, seed)?;
                Ok(test)
            }
        }
    }
}

/// Reorders `table`'s columns to match `names`, keyed by column name.
pub fn align_columns(
    table: &DescriptorTable,
    names: &[String],
) -> Result<DescriptorTable, CliError> {
    if table.feature_names == names {
        return Ok(table.clone());
    }
    let indices = table.column_indices(&names.to_vec()).map_err(CliError::from)?;
    Ok(table.project_columns(&indices))
}
