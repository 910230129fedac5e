//! Optimization: configuration, AdamW and the staged training loop.

pub mod config;
pub mod optimizer;
pub mod trainer;

pub use config::TrainConfig;
pub use optimizer::AdamW;
pub use trainer::{
    evaluate, mean_metrics, metrics_csv, train, LogRow, RunOptions, TrainOutcome, Trainer, ViewMetrics,
    CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER,
};
