//! `hybrid-screen`: optimize, train, evaluate, and interrogate hybrid
//! tree/network toxicity models from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 degenerate
//! search (every trial skipped / empty selection).

mod commands;
mod config;
mod out;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use hybrid_screen_core::{
    ArtifactError, DataError, ForestError, MetricsError, RankingError, SearchError, SnnError,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Degenerate(String),
}

impl CliError {
    fn config(msg: String) -> Self {
        CliError::Config(msg)
    }

    fn data(msg: String) -> Self {
        CliError::Data(msg)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Degenerate(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RankingError> for CliError {
    fn from(e: RankingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::AllTrialsSkipped => CliError::Degenerate(e.to_string()),
            SearchError::Forest(ForestError::EmptySelection) => {
                CliError::Degenerate(e.to_string())
            }
            SearchError::EmptySpace(_) | SearchError::WrongObjective { .. } => {
                CliError::Config(e.to_string())
            }
            SearchError::Snn(SnnError::InvalidHyperparams(_)) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hybrid-screen",
    about = "Hybrid tree-ensemble / shallow-network toxicity screening",
    version
)]
struct Cli {
    /// Run configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trials/trees/members (results are identical for
    /// any value).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides the config's `out_dir`; default ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the threshold/network search; writes trials.csv and
    /// best_config.json.
    Optimize {
        /// "series" (two-stage, default) or "parallel" (joint grid).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Train the final 4-member ensemble from a best-config; writes
    /// model.json and importances.json.
    Train {
        /// best_config.json produced by `optimize`.
        #[arg(long)]
        best: PathBuf,
        /// Comma-separated feature names to embed as a cutoff rule.
        #[arg(long, value_delimiter = ',')]
        rule_features: Option<Vec<String>>,
    },
    /// Score a labelled table; writes metrics.json plus roc.csv/pr.csv for
    /// classification.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Labelled table; defaults to the config's test split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score an unlabelled table; writes predictions.csv.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Id column name (default from config, else "Name").
        #[arg(long)]
        id_column: Option<String>,
    },
    /// Cross-task feature ranking from importance dumps; writes ranking.csv
    /// (and rule.json with --rule-features).
    Rank {
        /// importances.json files, one per task.
        #[arg(long, num_args = 1.., required = true)]
        importances: Vec<PathBuf>,
        /// Report only the top K features.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        rule_features: Option<Vec<String>>,
    },
    /// Apply a cutoff rule; writes prescreen.csv (+ summary when labelled).
    Prescreen {
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id_column: Option<String>,
        #[arg(long)]
        label_column: Option<String>,
    },
    /// Reproduce a sweep: series-parallel, n-estimators, feature-count, or
    /// depth.
    Casestudy {
        #[arg(long)]
        which: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = commands::Common {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Optimize { mode } => commands::cmd_optimize(&common, mode),
        Command::Train { best, rule_features } => {
            commands::cmd_train(&common, &best, rule_features)
        }
        Command::Evaluate { model, data } => {
            commands::cmd_evaluate(&common, &model, data.as_deref())
        }
        Command::Predict { model, data, id_column } => {
            commands::cmd_predict(&common, &model, &data, id_column)
        }
        Command::Rank { importances, top, rule_features } => {
            commands::cmd_rank(&common, &importances, top, rule_features)
        }
        Command::Prescreen { rule, data, id_column, label_column } => {
            commands::cmd_prescreen(&common, &rule, &data, id_column, label_column)
        }
        Command::Casestudy { which } => commands::cmd_casestudy(&common, &which),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
    {
        eprintln!("error: cannot configure {} worker threads: {e}", cli.jobs);
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
