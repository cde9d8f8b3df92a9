use super::manifest::LoadedRecording;
use super::{
    build_samples, prepare_segments, LabelSet, RecordingKey, Sample, Standardization,
    SyntheticDataset,
};
use crate::Result;

/// One recording reduced to its prepared segments and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecording {
    pub key: RecordingKey,
    pub labels: LabelSet,
    pub segments: Vec<Vec<f64>>,
}

impl PreparedRecording {
    pub fn murmur_present(&self) -> bool {
        self.labels.has_murmur()
    }
}

/// Runs extraction, resampling and standardization over every recording.
pub fn prepare_recordings(
    loaded: &[LoadedRecording],
    len: usize,
    mode: Standardization,
) -> Result<Vec<PreparedRecording>> {
    loaded
        .iter()
        .map(|l| {
            Ok(PreparedRecording {
                key: l.recording.key(),
                labels: l.patient.recording_labels(l.recording.location),
                segments: prepare_segments(&l.recording, &l.intervals, len, mode)?,
            })
        })
        .collect()
}

/// Seed for the recording at `index` under a root seed.
pub fn recording_seed(root: u64, index: usize) -> u64 {
    root ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds samples for every prepared recording, in order.
pub fn build_dataset_samples(
    prepared: &[PreparedRecording],
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, rec) in prepared.iter().enumerate() {
        out.extend(build_samples(
            &rec.segments,
            rec.labels,
            n,
            recording_seed(seed, i),
            &rec.key,
        )?);
    }
    Ok(out)
}

impl SyntheticDataset {
    /// The dataset in the same shape a manifest load produces.
    pub fn loaded(&self) -> Vec<LoadedRecording> {
        self.recordings
            .iter()
            .zip(&self.intervals)
            .map(|(rec, iv)| LoadedRecording {
                recording: rec.clone(),
                intervals: iv.clone(),
                patient: self
                    .patients
                    .iter()
                    .find(|p| p.patient_id == rec.patient_id)
                    .expect("every synthetic recording has a patient")
                    .clone(),
            })
            .collect()
    }
}
