use serde::{Deserialize, Serialize};

use super::{AudioRecording, HeartState, StateInterval};
use crate::{Error, Result};

pub const DEFAULT_SEGMENT_LENGTH: usize = 1024;

pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Slices `[S1.start, Systole.end)` for every S1 interval directly followed
/// by a Systole interval. Everything else is discarded.
pub fn extract_s1_systolic_segments(
    recording: &AudioRecording,
    intervals: &[StateInterval],
) -> Vec<Vec<f64>> {
    let rate = recording.sample_rate_hz as f64;
    let n = recording.samples.len();
    // One sample period of slack between S1 end and systole start.
    let gap_tolerance = 1.0 / rate + 1e-9;
    intervals
        .windows(2)
        .filter(|w| {
            w[0].state == HeartState::S1
                && w[1].state == HeartState::Systole
                && w[1].start_s - w[0].end_s <= gap_tolerance
        })
        .filter_map(|w| {
            let start = ((w[0].start_s * rate).round() as usize).min(n);
            let end = ((w[1].end_s * rate).round() as usize).min(n);
            (end > start).then(|| recording.samples[start..end].to_vec())
        })
        .collect()
}

/// Linear interpolation onto `len` points spanning the input's index range.
/// The first and last outputs equal the first and last inputs exactly.
pub fn resample_to_length(segment: &[f64], len: usize) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot resample a segment of {} point(s)",
            segment.len()
        )));
    }
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "target length must be at least 2, got {len}"
        )));
    }
    let last = segment.len() - 1;
    let scale = last as f64 / (len - 1) as f64;
    let mut out = Vec::with_capacity(len);
    for j in 0..len - 1 {
        let t = j as f64 * scale;
        let i = (t.floor() as usize).min(last - 1);
        let frac = t - i as f64;
        out.push(segment[i] + frac * (segment[i + 1] - segment[i]));
    }
    out.push(segment[last]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Standardization {
    /// `(x - mean) / (std + eps)` with the population std.
    #[default]
    UnitVariance,
    /// `x - mean` only.
    MeanOnly,
}

pub fn standardize(values: &[f64]) -> Vec<f64> {
    standardize_with(values, Standardization::UnitVariance)
}

/// Constant inputs map to all zeros in both modes.
pub fn standardize_with(values: &[f64], mode: Standardization) -> Vec<f64> {
    if values.is_empty() || values.iter().all(|&v| v == values[0]) {
        return vec![0.0; values.len()];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    match mode {
        Standardization::MeanOnly => centered,
        Standardization::UnitVariance => {
            let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
            let denom = std + STANDARDIZE_EPS;
            centered.into_iter().map(|c| c / denom).collect()
        }
    }
}

/// Extraction, resampling and standardization for one recording.
pub fn prepare_segments(
    recording: &AudioRecording,
    intervals: &[StateInterval],
    len: usize,
    mode: Standardization,
) -> Result<Vec<Vec<f64>>> {
    extract_s1_systolic_segments(recording, intervals)
        .into_iter()
        .filter(|s| s.len() >= 2)
        .map(|s| resample_to_length(&s, len).map(|r| standardize_with(&r, mode)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcg_data::Location;
    use proptest::prelude::*;

    fn iv(start_s: f64, end_s: f64, state: HeartState) -> StateInterval {
        StateInterval {
            start_s,
            end_s,
            state,
        }
    }

    fn recording(seconds: f64) -> AudioRecording {
        let n = (seconds * 4000.0) as usize;
        AudioRecording {
            patient_id: "p".into(),
            location: Location::TV,
            sample_rate_hz: 4000,
            samples: (0..n).map(|i| i as f64).collect(),
        }
    }

    #[test]
    fn only_s2_and_diastole_gives_nothing() {
        let rec = recording(1.0);
        let ivs = [
            iv(0.0, 0.1, HeartState::S2),
            iv(0.1, 0.5, HeartState::Diastole),
        ];
        assert!(extract_s1_systolic_segments(&rec, &ivs).is_empty());
    }

    #[test]
    fn two_cycles_give_1040_and_960_points() {
        let rec = recording(2.0);
        let ivs = [
            iv(0.0, 0.10, HeartState::S1),
            iv(0.10, 0.26, HeartState::Systole),
            iv(0.26, 0.36, HeartState::S2),
            iv(0.36, 1.0, HeartState::Diastole),
            iv(1.0, 1.09, HeartState::S1),
            iv(1.09, 1.24, HeartState::Systole),
            iv(1.24, 1.3, HeartState::S2),
        ];
        let segs = extract_s1_systolic_segments(&rec, &ivs);
        assert_eq!(segs.iter().map(Vec::len).collect::<Vec<_>>(), vec![1040, 960]);
        assert_eq!(segs[0][0], 0.0);
        assert_eq!(segs[1][0], 4000.0);
    }

    #[test]
    fn mean_cycle_is_1024_points() {
        let rec = recording(1.0);
        let ivs = [
            iv(0.0, 0.1, HeartState::S1),
            iv(0.1, 0.256, HeartState::Systole),
        ];
        assert_eq!(extract_s1_systolic_segments(&rec, &ivs)[0].len(), 1024);
    }

    #[test]
    fn s1_without_systole_discarded() {
        let rec = recording(1.0);
        let ivs = [
            iv(0.0, 0.1, HeartState::S1),
            iv(0.1, 0.2, HeartState::S2),
            iv(0.3, 0.4, HeartState::S1),
            iv(0.4, 0.5, HeartState::Unlabeled),
            iv(0.5, 0.6, HeartState::Systole),
        ];
        assert!(extract_s1_systolic_segments(&rec, &ivs).is_empty());
    }

    #[test]
    fn ramp_resample() {
        let out = resample_to_length(&[0.0, 1.0, 2.0, 3.0], 7).unwrap();
        let expected = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(resample_to_length(&[1.0], 8).is_err());
        assert!(resample_to_length(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[0.1; 7]), vec![0.0; 7]);
        let s = standardize(&[1.0, 3.0]);
        assert!((s[0] + 1.0).abs() < 1e-6 && (s[1] - 1.0).abs() < 1e-6);
        let m = standardize_with(&[1.0, 3.0], Standardization::MeanOnly);
        assert_eq!(m, vec![-1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn resample_preserves_constants_and_endpoints(
            v in -100.0f64..100.0,
            n in 2usize..300,
            len in 2usize..300,
            data in proptest::collection::vec(-1.0f64..1.0, 2..200),
        ) {
            let c = resample_to_length(&vec![v; n], len).unwrap();
            prop_assert_eq!(c.len(), len);
            prop_assert!(c.iter().all(|&x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)));
            let r = resample_to_length(&data, len).unwrap();
            prop_assert_eq!(r[0], data[0]);
            prop_assert_eq!(r[len - 1], *data.last().unwrap());
        }

        #[test]
        fn standardized_rows_have_zero_mean_unit_std(
            data in proptest::collection::vec(-10.0f64..10.0, 2..300),
        ) {
            prop_assume!(data.iter().any(|&x| (x - data[0]).abs() > 1e-3));
            let s = standardize(&data);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let std = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}
