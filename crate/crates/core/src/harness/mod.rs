//! Experiment orchestration on top of the library.

pub mod artifacts;
pub mod classifier;
pub mod config;
pub mod runs;

pub use artifacts::{export_representations, write_pgm, ReprMode};
pub use classifier::{evaluate_classifier, SurrogateClassifier};
pub use config::{ConfigFormat, ExperimentConfig, Task, DATA_ROOT_ENV};
pub use runs::{
    build_model, evaluate_checkpoint, run, run_image_task, run_mnist_naturalization, run_mnistdvs_naturalization,
    run_predictive_coding, sweep, sweep_csv, task_samples, DataSplit, ImageTaskData, ImageTaskReport, PredictiveCodingReport, RunReport,
    SweepAxis, SweepRow,
};
