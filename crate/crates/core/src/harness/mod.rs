//! Synthetic streams, stream files, tracking metrics, and benchmark sweeps.

pub mod bench;
pub mod metrics;
pub mod stream;
pub mod trajectory;

use thiserror::Error;

use crate::dynamical::DynamicalError;
use crate::instantaneous::InstantaneousError;
use crate::kinematics::ModelError;
use crate::so3::So3Error;

pub use bench::{
    run_benchmark, run_method, stream_dt, worker_threads, write_results_csv, write_series_csv, BenchConfig, Method,
    ModelSource, RunConfig, RunOutcome, RunRecord, Scenario, RESULT_COLUMNS, THREADS_ENV,
};
pub use metrics::{mnte, rmse_angvel, sample_metrics, MetricsSummary, SeriesStats, DEFAULT_TRANSIENT_DISCARD};
pub use stream::{check_stream, load_stream, read_stream, save_stream, write_stream, StreamError};
pub use trajectory::{generate_stream, GeneratedStream, NoiseSpec, TrajectoryKind, TrajectorySpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("trajectory spec is infeasible for the model: {0}")]
    SpecInfeasible(String),
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("stream does not match the model: {0}")]
    SchemaMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamical(#[from] DynamicalError),
    #[error(transparent)]
    Instantaneous(#[from] InstantaneousError),
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
