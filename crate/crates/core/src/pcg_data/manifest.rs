//! JSON dataset manifest: recordings with their audio and segmentation
//! files, plus one label file per patient. Relative paths resolve against
//! the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_patient_labels, parse_recording, AudioRecording, Location, MurmurStatus, PatientLabels,
    StateInterval,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub patient_id: String,
    pub location: Location,
    pub audio: PathBuf,
    pub segmentation: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub recordings: Vec<RecordingEntry>,
    pub patients: Vec<PatientEntry>,
}

/// A recording after ingestion, with its patient's annotation.
#[derive(Debug, Clone)]
pub struct LoadedRecording {
    pub recording: AudioRecording,
    pub intervals: Vec<StateInterval>,
    pub patient: PatientLabels,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("manifest {}: {e}", path.display()))
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Parses every file the manifest references. Patients marked Unknown
    /// are dropped together with their recordings.
    pub fn load(&self, base_dir: &Path) -> Result<Vec<LoadedRecording>> {
        if self.recordings.is_empty() {
            return Err(Error::InvalidArgument("no recordings".into()));
        }
        let mut patients = BTreeMap::new();
        for entry in &self.patients {
            let path = base_dir.join(&entry.labels);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let labels = parse_patient_labels(&text)
                .map_err(|e| Error::Label(format!("{}: {e}", path.display())))?;
            if labels.patient_id != entry.patient_id {
                return Err(Error::Label(format!(
                    "{}: patient id {} does not match manifest entry {}",
                    path.display(),
                    labels.patient_id,
                    entry.patient_id
                )));
            }
            patients.insert(entry.patient_id.clone(), labels);
        }

        let mut out = Vec::with_capacity(self.recordings.len());
        for entry in &self.recordings {
            let patient = patients.get(&entry.patient_id).ok_or_else(|| {
                Error::Label(format!("no label file for patient {}", entry.patient_id))
            })?;
            if patient.murmur == MurmurStatus::Unknown {
                continue;
            }
            let audio_path = base_dir.join(&entry.audio);
            let tsv_path = base_dir.join(&entry.segmentation);
            let audio = fs::read(&audio_path).map_err(|e| Error::io(&audio_path, e))?;
            let tsv = fs::read_to_string(&tsv_path).map_err(|e| Error::io(&tsv_path, e))?;
            let (recording, intervals) =
                parse_recording(&entry.patient_id, entry.location, &audio, &tsv).map_err(|e| {
                    Error::InvalidArgument(format!(
                        "{} / {}: {e}",
                        audio_path.display(),
                        tsv_path.display()
                    ))
                })?;
            out.push(LoadedRecording {
                recording,
                intervals,
                patient: patient.clone(),
            });
        }
        Ok(out)
    }
}
