//! Multilabel annotation of systolic heart murmurs from segmented
//! phonocardiogram (PCG) recordings.
//!
//! The pipeline runs in five stages:
//!
//! - [`pcg_data`]: ingest PCM audio and state timestamps, cut S1–systole
//!   segments, resample/standardize them and augment them into fixed-size
//!   samples; also a seeded synthetic recording generator.
//! - [`autodiff`]: a small tape-based reverse-mode engine with exactly the
//!   layers the network needs (convolution, dense blocks, pooling, affine,
//!   softmax / sigmoid losses) and a finite-difference checker.
//! - [`net`]: the ensemble of five label-group blocks, each with one encoder
//!   shared across all segments of a sample, plus a global sigmoid head.
//! - [`train`]: Adam, holdout / k-fold splits, metrics and patient-level
//!   mode voting.
//! - [`saliency`]: input-gradient attribution and per-segment contributions.
//!
//! [`io`] and [`cli`] tie everything to files and the `cardiolabel` binary.

pub mod autodiff;
pub mod cli;
mod error;
pub mod io;
pub mod net;
pub mod pcg_data;
pub mod saliency;
pub mod train;

pub use error::{Error, Result};
