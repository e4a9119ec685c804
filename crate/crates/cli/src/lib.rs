//! Experiment runner, persistence and plot-data emission for `zdc-core`.

pub mod config;
pub mod error;
pub mod persist;
pub mod plot;
pub mod runner;

pub use config::{ExperimentConfig, MethodSpec, TrainJob};
pub use error::CliError;
pub use persist::{load_policy, save_policy};
pub use plot::{emit_plot_data, PlotTable};
pub use runner::{run_experiment, run_train, ExperimentSummary, ResultRow};
