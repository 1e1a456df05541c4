//! File formats and experiment harness around [`scatternet_core`].

pub mod harness;
pub mod io;
pub mod table;

pub use harness::{
    compare_trials, run_one, sweep, CompareOutcome, ScenarioSource, SweepRow, TrialRow,
};
pub use io::{load_scenario, parse_weights_grid, read_scenario, write_rows, write_scenario};

/// Failures of the file and harness layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON in {path}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] scatternet_core::Error),
    #[error("bad weights grid: {0}")]
    WeightsGrid(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
