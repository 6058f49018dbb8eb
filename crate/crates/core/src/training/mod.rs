//! Stochastic variational training with the streaming fairness penalty,
//! temperature annealing, the SP warm start, random restarts, grid search
//! and slack-tolerance fair-model selection.
//!
//! Each minibatch step draws relaxed samples, folds them into the streaming
//! group counts, estimates ε-DF from the counts, and takes one Adam step on
//! `−(1/m) Σ ELBO + λ max(0, ε − ε₀) + l2 Σ ‖W‖²`.

mod config;
mod grid;
mod output;
mod select;
mod trainer;


pub use config::{anneal_temperature, TrainConfig};
pub use grid::{best_restart, fair_grid_search, random_restarts, run_trials, GridOutcome, GridSpec, LAMBDA_GRID};
pub use output::{write_json, write_scatter_csv, write_trace_csv, SelectionReport};
pub use select::{select_fair_model, Selection};
pub use trainer::{
    class_shares, dev_metrics, train, warm_start_sp, DevMetrics, EpochRecord, Trial, TrialResult, WarmStartReport,
    COLLAPSE_SHARE,
};
