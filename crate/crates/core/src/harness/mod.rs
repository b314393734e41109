//! Experiment runner: config, corpus and lattice preparation, method ×
//! seed comparisons, run logs, summaries and plot tables.

pub mod config;
pub mod experiment;
pub mod report;
pub mod runlog;

pub use config::ExperimentConfig;
pub use experiment::{
    generate, mean_posterior_entropy, prepare, run_experiment, run_in_memory, select_learning_rate, sgd_grid, Corpus, ExperimentResult, GridPoint, PreparedSeed,
};
pub use report::{emit_plots_data, medians, EntropyRow, MedianRow, SummaryRow};
pub use runlog::{RunLog, RunRow, RUNLOG_COLUMNS};
