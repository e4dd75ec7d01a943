//! Cross-module pipeline checks: search outcomes feeding final training,
//! artifact round-trips, and trial order-independence.

use hybrid_screen_core::*;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn planted(n: usize, p: usize, informative: usize, seed: u64) -> DescriptorTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let matrix = Array2::from_shape_fn((n, p), |(i, j)| {
        if j == informative {
            labels[i] * 2.0 - 1.0 + (rng.gen::<f64>() - 0.5)
        } else {
            rng.gen::<f64>() * 4.0 - 2.0
        }
    });
    DescriptorTable::new(
        (0..n).map(|i| format!("c{i}")).collect(),
        (0..p).map(|j| format!("f{j}")).collect(),
        matrix,
        Some(labels),
        TaskKind::Classification,
    )
    .unwrap()
}

#[test]
fn optimize_train_roundtrip_predict() {
    let table = planted(160, 8, 3, 5);
    let params = ForestParams {
        n_estimators: 50,
        ..ForestParams::for_task(TaskKind::Classification, 0)
    };
    let grid = ThresholdGrid { multipliers: vec![0.5, 1.0, 1.5] };
    let space = SnnSearchSpace {
        epochs: vec![40, 80],
        dropout: vec![0.0, 0.2],
        batch_size: vec![32],
        init_mode: vec![InitMode::HeNormal],
        activation: vec![Activation::Relu],
        n_iter: 4,
    };
    let base = SnnHyperparams {
        learning_rate: 0.01,
        ..SnnHyperparams::fixed_defaults(7)
    };
    let outcome =
        series_optimize(&table, &grid, &space, &base, &params, 5, 7, Objective::AucRoc).unwrap();
    assert!(outcome.best_metric > 0.9, "cv metric {}", outcome.best_metric);

    let final_model =
        train_final(&table, outcome.best_threshold, &outcome.best_hp, &params, 7).unwrap();
    let direct = final_model.ensemble.predict(&table).unwrap();

    // artifact round trip preserves predictions bit-exactly
    let artifact = ModelArtifact::from_ensemble(&final_model.ensemble, None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    artifact.save(&path).unwrap();
    let loaded = ModelArtifact::load(&path).unwrap();
    let (ensemble, _) = loaded.to_ensemble().unwrap();
    let reloaded = ensemble.predict(&table).unwrap();
    assert_eq!(direct, reloaded);

    // scores rank the separable classes correctly
    let sl = ScoredLabels::new(direct, table.labels().unwrap().to_vec()).unwrap();
    assert!(auc_roc(&sl).unwrap() > 0.95);
}

#[test]
fn trials_are_order_independent() {
    let table = planted(100, 6, 2, 9);
    let params = ForestParams {
        n_estimators: 30,
        ..ForestParams::for_task(TaskKind::Classification, 0)
    };
    let hp = SnnHyperparams {
        epochs: 20,
        batch_size: 32,
        learning_rate: 0.01,
        ..SnnHyperparams::fixed_defaults(3)
    };
    let thresholds = [0.5, 1.0, 1.8];
    let forward: Vec<TrialRecord> = thresholds
        .iter()
        .map(|&t| evaluate_config(&table, t, &hp, &params, 4, 11, Objective::AucRoc).unwrap())
        .collect();
    let backward: Vec<TrialRecord> = thresholds
        .iter()
        .rev()
        .map(|&t| evaluate_config(&table, t, &hp, &params, 4, 11, Objective::AucRoc).unwrap())
        .collect();
    for (f, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(f, b);
    }
}

#[test]
fn single_file_split_then_merge_covers_all_rows() {
    let table = planted(53, 5, 1, 13);
    let (train, cv, test) = split_random(&table, (0.6, 0.2, 0.2), 21).unwrap();
    assert_eq!(train.n_rows() + cv.n_rows() + test.n_rows(), 53);
    let merged = train.concat_rows(&cv).unwrap();
    assert_eq!(merged.n_rows(), train.n_rows() + cv.n_rows());
    // merged table feeds the search unchanged
    let params = ForestParams {
        n_estimators: 20,
        ..ForestParams::for_task(TaskKind::Classification, 0)
    };
    let hp = SnnHyperparams {
        epochs: 10,
        batch_size: 32,
        ..SnnHyperparams::fixed_defaults(3)
    };
    let record = evaluate_config(&merged, 1.0, &hp, &params, 3, 5, Objective::AucRoc).unwrap();
    assert!(!record.skipped);
}
