//! Recording ingestion, S1–systole segment extraction, augmentation and label
//! encoding.

mod augment;
mod dataset;
mod labels;
pub mod manifest;
mod segments;
pub mod synth;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{
    build_dataset_samples, prepare_recordings, recording_seed, PreparedRecording,
};
pub use augment::{build_samples, RecordingKey, DEFAULT_SEGMENTS_PER_SAMPLE};
pub use labels::{
    decode_labels, encode_labels, parse_patient_labels, write_patient_labels, LabelGroup,
    LabelSet, MurmurStatus, PatientLabels, ENCODED_WIDTH, GROUP_WIDTHS,
};
pub(crate) use labels::argmax;
pub use segments::{
    extract_s1_systolic_segments, prepare_segments, resample_to_length, standardize,
    standardize_with, Standardization, DEFAULT_SEGMENT_LENGTH, STANDARDIZE_EPS,
};
pub use synth::{generate_synthetic_dataset, SynthSpec, SyntheticDataset};
pub use wav::{
    encode_wav, parse_recording, parse_segmentation, write_segmentation, DEFAULT_SAMPLE_RATE,
};

/// Auscultation point of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Location {
    AV,
    PV,
    TV,
    MV,
    Phc,
}

impl Location {
    pub const ALL: [Location; 5] = [
        Location::AV,
        Location::PV,
        Location::TV,
        Location::MV,
        Location::Phc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Location::AV => "AV",
            Location::PV => "PV",
            Location::TV => "TV",
            Location::MV => "MV",
            Location::Phc => "Phc",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Location> {
        Location::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Location {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Location::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown location {s:?}")))
    }
}

/// Cardiac state of an annotated interval. Codes follow the segmentation TSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeartState {
    Unlabeled = 0,
    S1 = 1,
    Systole = 2,
    S2 = 3,
    Diastole = 4,
}

impl HeartState {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<HeartState> {
        Some(match code {
            0 => HeartState::Unlabeled,
            1 => HeartState::S1,
            2 => HeartState::Systole,
            3 => HeartState::S2,
            4 => HeartState::Diastole,
            _ => return None,
        })
    }
}

/// One body-position PCG waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecording {
    pub patient_id: String,
    pub location: Location,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl AudioRecording {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn key(&self) -> RecordingKey {
        RecordingKey {
            patient_id: self.patient_id.clone(),
            location: self.location,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub state: HeartState,
}

/// `N` resampled segments of one recording sharing one label set; the
/// network's input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `n × len` matrix.
    pub segments: Vec<f64>,
    pub n: usize,
    pub len: usize,
    pub labels: LabelSet,
    pub patient_id: String,
    pub location: Location,
    /// Trailing all-zero rows.
    pub pad_count: usize,
    /// Index of each non-padded row in the recording's segment sequence.
    pub source_indices: Vec<usize>,
}

impl Sample {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.segments[i * self.len..(i + 1) * self.len]
    }

    pub fn key(&self) -> RecordingKey {
        RecordingKey {
            patient_id: self.patient_id.clone(),
            location: self.location,
        }
    }
}
