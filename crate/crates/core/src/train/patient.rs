use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::net::{predict_sample, EnsembleParams};
use crate::pcg_data::{LabelGroup, LabelSet, Location, Sample};
use crate::{Error, Result};

/// Most frequent class in `votes`; ties go to the lowest class index.
pub fn mode_vote(votes: &[usize], width: usize) -> Result<usize> {
    if votes.is_empty() {
        return Err(Error::InvalidArgument("no votes".into()));
    }
    let mut counts = vec![0usize; width];
    for &v in votes {
        *counts
            .get_mut(v)
            .ok_or_else(|| Error::InvalidArgument(format!("vote {v} outside [0, {width})")))? += 1;
    }
    let best = *counts.iter().max().expect("width > 0");
    Ok(counts.iter().position(|&c| c == best).expect("max exists"))
}

/// Per-group mode over window predictions.
pub fn aggregate_votes(predictions: &[LabelSet]) -> Result<LabelSet> {
    let mut out = [0usize; 5];
    for g in LabelGroup::ALL {
        let votes: Vec<usize> = predictions.iter().map(|p| p.get(g)).collect();
        out[g.index()] = mode_vote(&votes, g.width())?;
    }
    Ok(LabelSet {
        timing: out[0] as u8,
        pitch: out[1] as u8,
        quality: out[2] as u8,
        shape: out[3] as u8,
        grading: out[4] as u8,
    })
}

/// One recording of a patient, already cut into prepared segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecording {
    pub patient_id: String,
    pub location: Location,
    /// Whether a murmur is audible at this location. Used only to choose
    /// which recordings vote.
    pub murmur_present: bool,
    pub segments: Vec<Vec<f64>>,
}

/// Non-overlapping windows of `n` segments; the tail is zero-padded into a
/// final window.
pub fn recording_windows(rec: &PatientRecording, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("window size must be ≥ 1".into()));
    }
    let Some(first) = rec.segments.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    rec.segments
        .chunks(n)
        .enumerate()
        .map(|(w, chunk)| {
            let mut data = Vec::with_capacity(n * len);
            for s in chunk {
                if s.len() != len {
                    return Err(Error::Shape(format!(
                        "segment of {} points, expected {len}",
                        s.len()
                    )));
                }
                data.extend_from_slice(s);
            }
            data.resize(n * len, 0.0);
            Ok(Sample {
                segments: data,
                n,
                len,
                labels: LabelSet::NORMAL,
                patient_id: rec.patient_id.clone(),
                location: rec.location,
                pad_count: n - chunk.len(),
                source_indices: (w * n..w * n + chunk.len()).collect(),
            })
        })
        .collect()
}

/// Trained models for one of the two regimes.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSet {
    PerLocation(BTreeMap<Location, EnsembleParams>),
    Pooled(EnsembleParams),
}

impl ModelSet {
    pub fn for_location(&self, location: Location) -> Result<&EnsembleParams> {
        match self {
            ModelSet::Pooled(p) => Ok(p),
            ModelSet::PerLocation(map) => map
                .get(&location)
                .ok_or_else(|| Error::InvalidArgument(format!("no model for location {location}"))),
        }
    }

    pub fn segments_per_window(&self) -> Result<usize> {
        match self {
            ModelSet::Pooled(p) => Ok(p.config.segments),
            ModelSet::PerLocation(map) => map
                .values()
                .next()
                .map(|p| p.config.segments)
                .ok_or_else(|| Error::InvalidArgument("empty model set".into())),
        }
    }
}

/// Window-level predictions followed by a per-group mode vote. Only
/// murmur-present recordings vote when any exist.
pub fn patient_level_predict_with<F>(
    recordings: &[PatientRecording],
    n: usize,
    mut predict: F,
) -> Result<LabelSet>
where
    F: FnMut(&Sample) -> Result<LabelSet>,
{
    let any_murmur = recordings.iter().any(|r| r.murmur_present);
    let mut votes = Vec::new();
    for rec in recordings.iter().filter(|r| r.murmur_present || !any_murmur) {
        for window in recording_windows(rec, n)? {
            votes.push(predict(&window)?);
        }
    }
    if votes.is_empty() {
        return Err(Error::InvalidArgument("patient has no segments to predict".into()));
    }
    aggregate_votes(&votes)
}

pub fn patient_level_predict(models: &ModelSet, recordings: &[PatientRecording]) -> Result<LabelSet> {
    let n = models.segments_per_window()?;
    patient_level_predict_with(recordings, n, |w| {
        predict_sample(models.for_location(w.location)?, w)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientAccuracy {
    pub groups: [f64; 5],
    pub average: f64,
    pub patients: usize,
}

/// Fraction of patients whose group value matches exactly, per group.
pub fn patient_accuracy(predictions: &[LabelSet], truths: &[LabelSet]) -> Result<PatientAccuracy> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} patients",
            predictions.len(),
            truths.len()
        )));
    }
    let n = truths.len() as f64;
    let mut groups = [0.0; 5];
    for g in LabelGroup::ALL {
        let hits = predictions
            .iter()
            .zip(truths)
            .filter(|(p, t)| p.get(g) == t.get(g))
            .count();
        groups[g.index()] = hits as f64 / n;
    }
    Ok(PatientAccuracy {
        average: groups.iter().sum::<f64>() / 5.0,
        groups,
        patients: truths.len(),
    })
}
