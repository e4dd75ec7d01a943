//! Subcommand implementations.

use std::path::{Path, PathBuf};

use hybrid_screen_core::artifact::{load_rule, save_rule};
use hybrid_screen_core::metrics::{points_to_csv, step_area, trapezoid_area};
use hybrid_screen_core::{
    auc_pr, auc_roc, max_f1, parallel_optimize, pr_points, prescreen_fractions, prescreen_table,
    r2, roc_points, root_cutoff_means, series_optimize, sweep_feature_count, sweep_hidden_layers,
    sweep_n_estimators, top_k, train_final, CutoffEntry, CutoffRule, ImportanceDump,
    load_table, ModelArtifact, ScoredLabels, TaskKind,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::out::{curve_csv, predictions_csv, trials_csv, write_file, write_json, BestConfig};
use crate::CliError;

pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::config("--config is required for this command".into()))?;
        RunConfig::load(path)
    }

    fn out_dir(&self, config: Option<&RunConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.and_then(|c| c.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

pub fn cmd_optimize(common: &Common, mode_flag: Option<String>) -> Result<(), CliError> {
    let config = common.config()?;
    let seed = config.resolve_seed(common.seed)?;
    let out_dir = common.out_dir(Some(&config));
    let table = config.load_train_cv(seed)?;
    let objective = config.objective();
    let params = config.forest_params(seed);
    let grid = config.threshold_grid();
    let k = config.folds();
    let base_hp = config.snn_defaults(seed);
    let mode = mode_flag
        .or_else(|| config.mode.clone())
        .unwrap_or_else(|| "series".to_string());

    let (best, trials) = match mode.as_str() {
        "series" => {
            let space = config.snn_space();
            let outcome =
                series_optimize(&table, &grid, &space, &base_hp, &params, k, seed, objective)?;
            (
                BestConfig {
                    schema: hybrid_screen_core::SCHEMA.to_string(),
                    mode,
                    objective,
                    threshold: outcome.best_threshold,
                    snn: outcome.best_hp.clone(),
                    cv_metric: outcome.best_metric,
                    n_features: best_trial_features(&outcome.trials, outcome.best_threshold),
                },
                outcome.trials,
            )
        }
        "parallel" => {
            let dropouts = config.dropout_grid();
            let outcome = parallel_optimize(
                &table, &grid, &dropouts, &base_hp, &params, k, seed, objective,
            )?;
            (
                BestConfig {
                    schema: hybrid_screen_core::SCHEMA.to_string(),
                    mode,
                    objective,
                    threshold: outcome.best_threshold,
                    snn: outcome.best_hp.clone(),
                    cv_metric: outcome.best_metric,
                    n_features: best_trial_features(&outcome.trials, outcome.best_threshold),
                },
                outcome.trials,
            )
        }
        other => {
            return Err(CliError::config(format!(
                "unknown mode {other:?} (expected series or parallel)"
            )))
        }
    };

    write_file(&out_dir.join("trials.csv"), &trials_csv(&trials))?;
    write_json(&out_dir.join("best_config.json"), &best)?;
    println!(
        "optimize[{}]: best threshold {} ({} features), cv {} = {}",
        best.mode, best.threshold, best.n_features, best.objective, best.cv_metric
    );
    Ok(())
}

fn best_trial_features(trials: &[hybrid_screen_core::TrialRecord], threshold: f64) -> usize {
    trials
        .iter()
        .filter(|t| !t.skipped && t.threshold == threshold)
        .map(|t| t.n_features_selected)
        .last()
        .unwrap_or(0)
}

pub fn cmd_train(
    common: &Common,
    best_path: &Path,
    rule_features_flag: Option<Vec<String>>,
) -> Result<(), CliError> {
    let config = common.config()?;
    let seed = config.resolve_seed(common.seed)?;
    let out_dir = common.out_dir(Some(&config));
    let table = config.load_train_cv(seed)?;
    let best = BestConfig::load(best_path)?;
    let params = config.forest_params(seed);

    let final_model = train_final(&table, best.threshold, &best.snn, &params, seed)?;
    let ensemble = &final_model.ensemble;

    // kept-column names, importances, and raw-unit shallowest-split cutoffs
    let kept_names: Vec<String> = ensemble
        .kept_columns
        .iter()
        .map(|&j| ensemble.feature_names[j].clone())
        .collect();
    let raw_cutoffs: Vec<Option<f64>> = root_cutoff_means(&final_model.forest)
        .iter()
        .enumerate()
        .map(|(j, c)| {
            c.map(|c| c * ensemble.scaler.stds[j] + ensemble.scaler.means[j])
        })
        .collect();

    let rule_features = rule_features_flag.or_else(|| config.rule_features.clone());
    let rule = match rule_features {
        Some(features) => {
            let mut entries = Vec::with_capacity(features.len());
            for name in &features {
                let idx = kept_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| CliError::data(format!("rule feature {name:?} not in kept columns")))?;
                let cutoff = raw_cutoffs[idx].ok_or_else(|| {
                    CliError::data(format!("rule feature {name:?} never splits any tree"))
                })?;
                entries.push(CutoffEntry { feature: name.clone(), cutoff });
            }
            Some(CutoffRule::new(entries).map_err(|e| CliError::data(e.to_string()))?)
        }
        None => None,
    };

    let artifact = ModelArtifact::from_ensemble(ensemble, rule.as_ref());
    artifact.save(&out_dir.join("model.json"))?;

    let dump = ImportanceDump::new(
        task_label(&config),
        kept_names,
        final_model.importances.values.clone(),
        raw_cutoffs,
    );
    dump.save(&out_dir.join("importances.json"))?;
    println!(
        "train: {} members on {} selected features -> model.json, importances.json",
        ensemble.members.len(),
        ensemble.selected.len()
    );
    Ok(())
}

fn task_label(config: &RunConfig) -> String {
    match &config.data {
        crate::config::DataSpec::Files { train, .. } => stem(train),
        crate::config::DataSpec::Single { file, .. } => stem(file),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".to_string())
}

#[derive(Serialize)]
struct ClassificationMetrics {
    schema: String,
    auc_roc: f64,
    auc_pr: f64,
    max_f1: f64,
    max_f1_threshold: f64,
    n_test: usize,
}

#[derive(Serialize)]
struct RegressionMetrics {
    schema: String,
    r2: f64,
    n_test: usize,
}

pub fn cmd_evaluate(
    common: &Common,
    model_path: &Path,
    data_path: Option<&Path>,
) -> Result<(), CliError> {
    let artifact = ModelArtifact::load(model_path)?;
    let (ensemble, _) = artifact.to_ensemble()?;
    let (table, out_dir) = match data_path {
        Some(path) => {
            // direct table: column names come from config when present
            let (config, out_dir) = match &common.config {
                Some(_) => {
                    let c = common.config()?;
                    let dir = common.out_dir(Some(&c));
                    (Some(c), dir)
                }
                None => (None, common.out_dir(None)),
            };
            let id = config.as_ref().map(|c| c.id_column().to_string());
            let label = match &config {
                Some(c) => c.label_column()?.to_string(),
                None => "label".to_string(),
            };
            let table = load_table(
                path,
                id.as_deref().unwrap_or("Name"),
                Some(&label),
                ensemble.task_kind,
            )?;
            (table, out_dir)
        }
        None => {
            let config = common.config()?;
            let seed = config.resolve_seed(common.seed)?;
            let out_dir = common.out_dir(Some(&config));
            (config.load_test(seed)?, out_dir)
        }
    };

    let scores = ensemble.predict(&table)?;
    let labels = table.labels().map_err(CliError::from)?;
    match ensemble.task_kind {
        TaskKind::Classification => {
            let sl = ScoredLabels::new(scores, labels.to_vec()).map_err(CliError::from)?;
            let auc = auc_roc(&sl).map_err(CliError::from)?;
            let ap = auc_pr(&sl).map_err(CliError::from)?;
            let (f1, tau) = max_f1(&sl).map_err(CliError::from)?;
            let roc = roc_points(&sl).map_err(CliError::from)?;
            let pr = pr_points(&sl).map_err(CliError::from)?;
            debug_assert!((trapezoid_area(&roc) - auc).abs() < 1e-9);
            debug_assert!((step_area(&pr) - ap).abs() < 1e-9);
            write_json(
                &out_dir.join("metrics.json"),
                &ClassificationMetrics {
                    schema: hybrid_screen_core::SCHEMA.to_string(),
                    auc_roc: auc,
                    auc_pr: ap,
                    max_f1: f1,
                    max_f1_threshold: tau,
                    n_test: table.n_rows(),
                },
            )?;
            write_file(&out_dir.join("roc.csv"), &points_to_csv(&roc))?;
            write_file(&out_dir.join("pr.csv"), &points_to_csv(&pr))?;
            println!("evaluate: auc_roc {auc}, auc_pr {ap}, max_f1 {f1}");
        }
        TaskKind::Regression => {
            let score = r2(&scores, labels).map_err(CliError::from)?;
            write_json(
                &out_dir.join("metrics.json"),
                &RegressionMetrics {
                    schema: hybrid_screen_core::SCHEMA.to_string(),
                    r2: score,
                    n_test: table.n_rows(),
                },
            )?;
            println!("evaluate: r2 {score}");
        }
    }
    Ok(())
}

pub fn cmd_predict(
    common: &Common,
    model_path: &Path,
    data_path: &Path,
    id_column: Option<String>,
) -> Result<(), CliError> {
    let artifact = ModelArtifact::load(model_path)?;
    let (ensemble, _) = artifact.to_ensemble()?;
    let (config, out_dir) = match &common.config {
        Some(_) => {
            let c = common.config()?;
            let dir = common.out_dir(Some(&c));
            (Some(c), dir)
        }
        None => (None, common.out_dir(None)),
    };
    let id = id_column
        .or_else(|| config.as_ref().map(|c| c.id_column().to_string()))
        .unwrap_or_else(|| "Name".to_string());
    let table = load_table(data_path, &id, None, ensemble.task_kind)?;
    let scores = ensemble.predict(&table)?;
    write_file(
        &out_dir.join("predictions.csv"),
        &predictions_csv(&table.compound_ids, &scores),
    )?;
    println!("predict: scored {} compounds", table.n_rows());
    Ok(())
}

pub fn cmd_rank(
    common: &Common,
    importance_paths: &[PathBuf],
    top: Option<usize>,
    rule_features: Option<Vec<String>>,
) -> Result<(), CliError> {
    if importance_paths.is_empty() {
        return Err(CliError::config("rank needs at least one importance dump".into()));
    }
    let out_dir = match &common.config {
        Some(_) => {
            let c = common.config()?;
            common.out_dir(Some(&c))
        }
        None => common.out_dir(None),
    };
    let dumps: Vec<ImportanceDump> = importance_paths
        .iter()
        .map(|p| ImportanceDump::load(p).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<_> = dumps.iter().map(|d| d.as_task_importance()).collect();
    let universe_size = {
        let mut names = std::collections::HashSet::new();
        for t in &tasks {
            names.extend(t.feature_names.iter());
        }
        names.len()
    };
    let k = top.unwrap_or(universe_size).min(universe_size).max(1);
    let report = top_k(&tasks, k).map_err(|e| CliError::data(e.to_string()))?;
    let mut csv = String::from("feature,cumulative_gini,average_rank\n");
    for row in &report {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.feature, row.cumulative_gini, row.average_rank
        ));
    }
    write_file(&out_dir.join("ranking.csv"), &csv)?;

    if let Some(features) = rule_features {
        // average the per-task raw-unit cutoffs recorded in the dumps
        let mut entries = Vec::with_capacity(features.len());
        for name in &features {
            let cutoffs: Vec<f64> = dumps
                .iter()
                .filter_map(|d| {
                    d.feature_names
                        .iter()
                        .position(|n| n == name)
                        .and_then(|i| d.root_cutoffs[i])
                })
                .collect();
            if cutoffs.is_empty() {
                return Err(CliError::data(format!(
                    "rule feature {name:?} absent from every importance dump"
                )));
            }
            entries.push(CutoffEntry {
                feature: name.clone(),
                cutoff: cutoffs.iter().sum::<f64>() / cutoffs.len() as f64,
            });
        }
        let rule = CutoffRule::new(entries).map_err(|e| CliError::data(e.to_string()))?;
        save_rule(&rule, &out_dir.join("rule.json"))?;
        println!("rank: wrote ranking.csv ({k} features) and rule.json");
    } else {
        println!("rank: wrote ranking.csv ({k} features)");
    }
    Ok(())
}

#[derive(Serialize)]
struct PrescreenSummary {
    schema: String,
    rule: Vec<CutoffEntry>,
    group_size: usize,
    n_toxic: usize,
    n_nontoxic: usize,
    toxic_fraction: f64,
    nontoxic_fraction: f64,
}

pub fn cmd_prescreen(
    common: &Common,
    rule_path: &Path,
    data_path: &Path,
    id_column: Option<String>,
    label_column: Option<String>,
) -> Result<(), CliError> {
    let rule = load_rule(rule_path)?;
    let (config, out_dir) = match &common.config {
        Some(_) => {
            let c = common.config()?;
            let dir = common.out_dir(Some(&c));
            (Some(c), dir)
        }
        None => (None, common.out_dir(None)),
    };
    let id = id_column
        .or_else(|| config.as_ref().map(|c| c.id_column().to_string()))
        .unwrap_or_else(|| "Name".to_string());
    let label = label_column.or_else(|| config.as_ref().and_then(|c| c.label_column.clone()));
    let table = load_table(
        data_path,
        &id,
        label.as_deref(),
        TaskKind::Classification,
    )?;

    let decisions = prescreen_table(&table, &rule).map_err(CliError::from)?;
    let mut csv = String::from("compound_id,call,missing_value\n");
    for (id, d) in table.compound_ids.iter().zip(&decisions) {
        csv.push_str(&format!("{},{},{}\n", id, d.call, d.missing_value));
    }
    write_file(&out_dir.join("prescreen.csv"), &csv)?;

    if table.labels.is_some() {
        let (toxic, nontoxic) = prescreen_fractions(&table, &rule).map_err(CliError::from)?;
        let labels = table.labels().map_err(CliError::from)?;
        let n_toxic = labels.iter().filter(|&&l| l == 1.0).count();
        let group_size = decisions
            .iter()
            .filter(|d| d.call == hybrid_screen_core::PrescreenCall::SafeZone)
            .count();
        write_json(
            &out_dir.join("prescreen_summary.json"),
            &PrescreenSummary {
                schema: hybrid_screen_core::SCHEMA.to_string(),
                rule: rule.entries.clone(),
                group_size,
                n_toxic,
                n_nontoxic: labels.len() - n_toxic,
                toxic_fraction: toxic,
                nontoxic_fraction: nontoxic,
            },
        )?;
        println!("prescreen: safe zone {group_size}/{} (toxic fraction {toxic}, nontoxic {nontoxic})", table.n_rows());
    } else {
        println!("prescreen: classified {} compounds (no labels, no summary)", table.n_rows());
    }
    Ok(())
}

pub fn cmd_casestudy(common: &Common, which: &str) -> Result<(), CliError> {
    let config = common.config()?;
    let seed = config.resolve_seed(common.seed)?;
    let out_dir = common.out_dir(Some(&config));
    let table = config.load_train_cv(seed)?;
    let objective = config.objective();
    let params = config.forest_params(seed);
    let grid = config.threshold_grid();
    let k = config.folds();
    let sweep = config.sweep.clone().unwrap_or_default();
    let hp = config.snn_defaults(seed);
    let fixed_t = sweep.threshold.unwrap_or(1.0);

    match which {
        "series-parallel" => {
            let space = config.snn_space();
            let series =
                series_optimize(&table, &grid, &space, &hp, &params, k, seed, objective)?;
            let dropouts = config.dropout_grid();
            let parallel = parallel_optimize(
                &table, &grid, &dropouts, &hp, &params, k, seed, objective,
            )?;
            let comparison = vec![
                ("series".to_string(), series.best_metric),
                ("parallel".to_string(), parallel.best_metric),
            ];
            write_file(&out_dir.join("mode_comparison.csv"), &curve_csv("mode", &comparison))?;
            write_file(&out_dir.join("trials_series.csv"), &trials_csv(&series.trials))?;
            write_file(&out_dir.join("trials_parallel.csv"), &trials_csv(&parallel.trials))?;
            println!(
                "casestudy series-parallel: series {} vs parallel {}",
                series.best_metric, parallel.best_metric
            );
        }
        "n-estimators" => {
            let values = sweep
                .n_estimators
                .unwrap_or_else(|| vec![10, 50, 100, 500, 1000, 2000]);
            let (curve, trials) = sweep_n_estimators(
                &table, &values, fixed_t, &hp, &params, k, seed, objective,
            )?;
            write_file(&out_dir.join("n_estimators_auc.csv"), &curve_csv("n_estimators", &curve))?;
            write_file(&out_dir.join("trials_n_estimators.csv"), &trials_csv(&trials))?;
            println!("casestudy n-estimators: {} points", curve.len());
        }
        "feature-count" => {
            let (curve, trials) =
                sweep_feature_count(&table, &grid, &hp, &params, k, seed, objective)?;
            write_file(&out_dir.join("feature_count_auc.csv"), &curve_csv("n_features", &curve))?;
            write_file(&out_dir.join("trials_feature_count.csv"), &trials_csv(&trials))?;
            println!("casestudy feature-count: {} points", curve.len());
        }
        "depth" => {
            let depths = sweep.depths.unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
            let (curve, trials) = sweep_hidden_layers(
                &table, &depths, fixed_t, &hp, &params, k, seed, objective,
            )?;
            write_file(&out_dir.join("depth_auc.csv"), &curve_csv("hidden_layers", &curve))?;
            write_file(&out_dir.join("trials_depth.csv"), &trials_csv(&trials))?;
            println!("casestudy depth: {} points", curve.len());
        }
        other => {
            return Err(CliError::config(format!(
                "unknown case study {other:?} (expected series-parallel, n-estimators, feature-count, or depth)"
            )))
        }
    }
    Ok(())
}
