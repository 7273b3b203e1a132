//! Leave-one-subject-out training, evaluation, and reports.

mod config;
mod folds;
mod report;
mod suite;
mod train;

pub use config::ExperimentConfig;
pub use folds::{eligible_subjects, make_folds, run_seed, split, FoldSpec};
pub use report::{
    ensemble, evaluate, evaluate_all, mae, rmse, write_predictions_csv, write_reports, write_summary_csv,
    SubjectReport, PREDICTIONS_FILE, SUMMARY_FILE,
};
pub use suite::{
    ablation_arms, load_runs, run_arms, save_run, Arm, SuiteOptions, ARM_SELF_ENCODE, ARM_WITHOUT_DISCRIMINATOR,
    ARM_WITH_DISCRIMINATOR,
};
pub use train::{mae_bpm, predict_segments, train_run, Prediction, RunResult, TrainOptions};
