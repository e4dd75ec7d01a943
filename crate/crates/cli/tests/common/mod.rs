//! Shared fixtures for CLI integration tests: deterministic toy descriptor
//! tables and run configs written into a temp dir.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_hybrid-screen");

/// Balanced binary toy table: column `d<informative>` separates the classes,
/// one constant column (`d_const`) exercises cleaning.
pub fn write_toy_csv(path: &Path, n: usize, p: usize, informative: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("Name,");
    out.push_str(&(0..p).map(|j| format!("d{j}")).collect::<Vec<_>>().join(","));
    out.push_str(",d_const,label\n");
    for i in 0..n {
        let y = i % 2;
        let mut row = vec![format!("m{i}")];
        for j in 0..p {
            let v = if j == informative {
                (y as f64) * 2.0 - 1.0 + (rng.gen::<f64>() - 0.5)
            } else {
                rng.gen::<f64>() * 4.0 - 2.0
            };
            row.push(format!("{v}"));
        }
        row.push("7.0".to_string());
        row.push(y.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Fast single-file config over the toy table.
pub fn write_fast_config(dir: &Path, data: &Path, seed: u64) -> PathBuf {
    let config = serde_json::json!({
        "task_kind": "classification",
        "data": {"file": data.to_str().unwrap(), "fractions": [0.6, 0.2, 0.2]},
        "label_column": "label",
        "seed": seed,
        "folds": 4,
        "threshold_grid": [0.5, 1.0, 1.5],
        "snn": {"epochs": 20, "batch_size": 32, "learning_rate": 0.02},
        "snn_space": {"epochs": [20, 40], "dropout": [0.0, 0.2], "batch_size": [32], "n_iter": 3},
        "forest": {"n_estimators": 40},
        "dropout_grid": [0.0, 0.3],
        "sweep": {"n_estimators": [20, 40], "depths": [1, 2], "threshold": 1.0}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary spawns")
}

pub fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Byte-compares every regular file in two directories (same file set).
pub fn assert_dirs_identical(a: &Path, b: &Path) {
    let list = |dir: &Path| -> Vec<String> {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    let names_a = list(a);
    assert_eq!(names_a, list(b), "output file sets differ");
    for name in names_a {
        let bytes_a = std::fs::read(a.join(&name)).unwrap();
        let bytes_b = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "file {name} differs between runs");
    }
}
