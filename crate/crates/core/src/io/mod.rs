//! Run configuration, checkpoints, the binary sample store and CSV tables.

mod checkpoint;
mod config;
mod store;
mod tables;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Regime, RunConfig};
pub use store::{
    decode_samples, encode_samples, read_sample_store, write_sample_store, STORE_MAGIC,
    STORE_VERSION,
};
pub use tables::{
    average_reports, history_csv, location_report, metrics_csv, patient_accuracy_csv,
};
