//! Benchmark harness: synthetic dataset generation calibrated to the
//! production table statistics, the progressive-optimization ladder, a
//! discrete-event autoscaling simulator, and a live end-to-end runner.

mod gen;
mod ladder;
mod live;
mod sim;

pub use gen::{
    default_graph, gen_dataset, regen_samples, sample_projections, zipf_feature_weights,
    GenConfig,
};
pub use ladder::{
    emit_report, io_size_quantiles, render_report, run_ladder, IoQuantiles, LadderConfig,
    LadderReport, LadderStep, ReportFormat, LADDER_STEPS, REFERENCE_IO_SIZES,
    REFERENCE_STORAGE, REFERENCE_TRANSFORM_SHARES, REFERENCE_WORKER,
};
pub use live::{drain_session, paced_trainer_run, run_live, LiveRunConfig, LiveRunReport};
pub use sim::{run_scaling_sim, ScalingSimConfig, ScalingSimResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store: {0}")]
    Store(#[from] crate::store::StoreError),
    #[error("table: {0}")]
    Table(#[from] crate::table::TableError),
    #[error("plan: {0}")]
    Plan(#[from] crate::plan::PlanError),
    #[error("transform: {0}")]
    Exec(#[from] crate::transform::ExecError),
    #[error("graph: {0}")]
    Graph(#[from] crate::transform::GraphError),
    #[error("model: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("master: {0}")]
    Master(#[from] crate::master::MasterError),
    #[error("worker: {0}")]
    Worker(#[from] crate::worker::WorkerError),
    #[error("client: {0}")]
    Client(#[from] crate::client::ClientError),
    #[error("{0}")]
    Config(String),
}
