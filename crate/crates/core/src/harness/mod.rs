//! Experiment orchestration: configs, the training loop, metrics files,
//! sweeps and plots.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use metrics::{read_metrics, write_metrics, MetricsRecord};
pub use plot::plot_metrics;
pub use sweep::{sweep, write_sweep, SweepAxis, SweepRow};
pub use train::{
    evaluate, evaluate_checkpoint, run_training, train, write_run, Evaluation, TrainedRun,
};
