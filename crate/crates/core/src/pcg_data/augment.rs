use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSet, Location, Sample};
use crate::{Error, Result};

pub const DEFAULT_SEGMENTS_PER_SAMPLE: usize = 10;

/// Identifies the source recording of a sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingKey {
    pub patient_id: String,
    pub location: Location,
}

/// Turns one recording's prepared segments into fixed-size samples.
///
/// Murmur recordings slide a step-1 window of `n` segments over the
/// sequence (or emit one zero-padded sample when shorter than `n`). Normal
/// recordings with more than `n` segments get two independent ordered draws
/// without replacement; otherwise one sample, zero-padded at the tail.
pub fn build_samples(
    segments: &[Vec<f64>],
    labels: LabelSet,
    n: usize,
    rng_seed: u64,
    origin: &RecordingKey,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("segments per sample must be ≥ 1".into()));
    }
    let k = segments.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let len = segments[0].len();
    if let Some(bad) = segments.iter().position(|s| s.len() != len) {
        return Err(Error::Shape(format!(
            "segment {bad} has {} points, expected {len}",
            segments[bad].len()
        )));
    }

    let make = |indices: Vec<usize>| -> Sample {
        let mut data = Vec::with_capacity(n * len);
        for &i in &indices {
            data.extend_from_slice(&segments[i]);
        }
        data.resize(n * len, 0.0);
        Sample {
            segments: data,
            n,
            len,
            labels,
            patient_id: origin.patient_id.clone(),
            location: origin.location,
            pad_count: n - indices.len(),
            source_indices: indices,
        }
    };

    let samples = if labels.has_murmur() {
        if k >= n {
            (0..=k - n).map(|start| make((start..start + n).collect())).collect()
        } else {
            vec![make((0..k).collect())]
        }
    } else if k > n {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..2)
            .map(|_| {
                let mut picked = index::sample(&mut rng, k, n).into_vec();
                picked.sort_unstable();
                make(picked)
            })
            .collect()
    } else {
        vec![make((0..k).collect())]
    };
    Ok(samples)
}
