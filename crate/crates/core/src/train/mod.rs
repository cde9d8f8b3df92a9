//! Optimizer, data splits, training loop, metrics and patient-level voting.

mod adam;
mod metrics;
mod patient;
mod splits;
mod trainer;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use metrics::{compute_metrics, GroupMetrics, MetricsReport};
pub use patient::{
    aggregate_votes, mode_vote, patient_accuracy, patient_level_predict,
    patient_level_predict_with, recording_windows, ModelSet, PatientAccuracy, PatientRecording,
};
pub use splits::{make_splits, SplitPlan, DEFAULT_FOLDS, DEFAULT_HOLDOUT_FRACTION};
pub use trainer::{evaluate, train, train_observed, EpochRecord, TrainConfig, TrainOutcome};
