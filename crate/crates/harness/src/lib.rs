//! Experiment runner for the `temperflow` samplers.
//!
//! A run reads an [`ExperimentConfig`](config::ExperimentConfig) from TOML,
//! executes seeded replications and writes `report.json`, `metrics.csv`,
//! `betas.jsonl`, `timings.csv` and `manifest.json` (plus optional samples).
//! `metrics.csv` depends only on the config and seed; wall-clock numbers go
//! to `timings.csv`.

pub mod config;
pub mod experiments;
pub mod methods;
pub mod output;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind, Method, TargetSpec};
pub use experiments::{run_experiment, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] temperflow::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
