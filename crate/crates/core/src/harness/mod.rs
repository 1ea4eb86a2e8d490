//! Configuration-driven experiments: datasets, training loops, γ₀ search,
//! CSV traces and SVG plots.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dynamics::DynamicsError;
use crate::objective::ObjectiveError;
use crate::optim::OptimError;

pub mod check;
pub mod config;
pub mod data;
pub mod report;
pub mod runner;

pub use config::{DataConfig, ExperimentConfig, FlowConfig, GridConfig, ObjectiveConfig, RunConfig, Sampling, OUT_DIR_ENV};
pub use data::{load_idx_dataset, load_idx_split, make_blobs, Dataset};
pub use report::{emit_csv, emit_svg_plot, read_trace_csv, write_experiment, PlotSeries, CSV_HEADER};
pub use runner::{
    grid_search_gamma0, run_deterministic, run_experiment, run_grid, run_stochastic, GridOutcome, LoopSettings, Problem,
    RunTrace, TraceRow, TrainTask,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("IDX parse error at byte offset {offset}: {message}")]
    Idx { offset: usize, message: String },
    #[error("{}: IDX parse error at byte offset {offset}: {message}", path.display())]
    IdxFile {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("grid search for {label}: every candidate overflowed")]
    GridExhausted { label: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            HarnessError::Idx { offset, message } => HarnessError::IdxFile {
                path: path.to_path_buf(),
                offset,
                message,
            },
            other => other,
        }
    }
}
