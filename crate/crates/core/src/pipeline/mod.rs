//! Data loading, windowing, evaluation and the end-to-end experiment.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod windows;

pub use data::{load_csv, Dataset, Splits};
pub use experiment::{run_experiment, AnomalyReport, ExperimentConfig};
pub use metrics::{evaluate_detection, DetectionReport};
pub use windows::{make_windows, WindowedSet};
