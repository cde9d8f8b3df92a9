use std::io::Cursor;

use super::{AudioRecording, HeartState, Location, StateInterval};
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 4000;

const PCM_SCALE: f64 = 32768.0;

/// Decodes a mono 16-bit PCM RIFF payload and its segmentation TSV.
///
/// Samples are scaled into `[-1, 1)` by dividing by 32768. Intervals must be
/// sorted, non-overlapping and lie within the recording.
pub fn parse_recording(
    patient_id: &str,
    location: Location,
    audio_bytes: &[u8],
    timestamp_tsv: &str,
) -> Result<(AudioRecording, Vec<StateInterval>)> {
    if audio_bytes.is_empty() {
        return Err(Error::Audio("no samples".into()));
    }
    let reader = hound::WavReader::new(Cursor::new(audio_bytes))
        .map_err(|e| Error::Audio(format!("malformed header: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "expected 16-bit integer PCM, found {} bits {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Audio("declared sample rate is zero".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Audio(format!("truncated sample data: {e}")))?;
    if samples.is_empty() {
        return Err(Error::Audio("no samples".into()));
    }
    let recording = AudioRecording {
        patient_id: patient_id.to_string(),
        location,
        sample_rate_hz: spec.sample_rate,
        samples,
    };
    let intervals = parse_segmentation(timestamp_tsv, Some(recording.duration_s()))?;
    Ok((recording, intervals))
}

/// Parses `start_s<TAB>end_s<TAB>state_code` rows. Rows are 1-based in
/// diagnostics. When `duration_s` is given, intervals ending past it (by more
/// than a microsecond) are rejected.
pub fn parse_segmentation(text: &str, duration_s: Option<f64>) -> Result<Vec<StateInterval>> {
    let mut out: Vec<StateInterval> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Segmentation {
                row,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Segmentation {
                    row,
                    msg: format!("{what} {s:?} is not a finite number"),
                })
        };
        let start_s = num(fields[0], "start")?;
        let end_s = num(fields[1], "end")?;
        let state = fields[2]
            .parse::<u8>()
            .ok()
            .and_then(HeartState::from_code)
            .ok_or_else(|| Error::Segmentation {
                row,
                msg: format!("state code {:?} not in 0..=4", fields[2]),
            })?;
        if start_s < 0.0 {
            return Err(Error::Segmentation {
                row,
                msg: format!("negative start {start_s}"),
            });
        }
        if end_s <= start_s {
            return Err(Error::Segmentation {
                row,
                msg: format!("inverted interval {start_s}..{end_s}"),
            });
        }
        if let Some(prev) = out.last() {
            if start_s < prev.end_s {
                return Err(Error::Segmentation {
                    row,
                    msg: format!(
                        "interval {start_s}..{end_s} overlaps or precedes previous ending at {}",
                        prev.end_s
                    ),
                });
            }
        }
        if let Some(d) = duration_s {
            if end_s > d + 1e-6 {
                return Err(Error::Segmentation {
                    row,
                    msg: format!("interval end {end_s} beyond recording length {d}"),
                });
            }
        }
        out.push(StateInterval {
            start_s,
            end_s,
            state,
        });
    }
    Ok(out)
}

/// Tab-separated `start end state` rows, readable by [`parse_segmentation`].
pub fn write_segmentation(intervals: &[StateInterval]) -> String {
    intervals
        .iter()
        .map(|iv| format!("{}\t{}\t{}\n", iv.start_s, iv.end_s, iv.state.code()))
        .collect()
}

/// Encodes samples in `[-1, 1]` as a mono 16-bit PCM RIFF file. Values are
/// scaled by 32768, rounded and clamped to the i16 range.
pub fn encode_wav(samples: &[f64], sample_rate_hz: u32) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec)
            .map_err(|e| Error::Audio(format!("cannot start wav: {e}")))?;
        for &s in samples {
            let v = (s * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            writer
                .write_sample(v)
                .map_err(|e| Error::Audio(format!("cannot write sample: {e}")))?;
        }
        writer
            .finalize()
            .map_err(|e| Error::Audio(format!("cannot finalize wav: {e}")))?;
    }
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tsv(rows: &[(f64, f64, u8)]) -> String {
        rows.iter()
            .map(|(a, b, c)| format!("{a}\t{b}\t{c}\n"))
            .collect()
    }

    #[test]
    fn segmentation_text_roundtrip() {
        let text = tsv(&[(0.0, 0.05, 0), (0.05, 0.125, 1), (0.125, 0.3, 2)]);
        let parsed = parse_segmentation(&text, None).unwrap();
        assert_eq!(write_segmentation(&parsed), text);
    }

    #[test]
    fn empty_payload_has_no_samples() {
        let err = parse_recording("1", Location::AV, &[], "").unwrap_err();
        assert!(err.to_string().contains("no samples"), "{err}");
        let header_only = encode_wav(&[], 4000).unwrap();
        let err = parse_recording("1", Location::AV, &header_only, "").unwrap_err();
        assert!(err.to_string().contains("no samples"), "{err}");
    }

    #[test]
    fn sine_roundtrip_within_one_lsb() {
        let wave: Vec<f64> = (0..4000)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 50.0 * i as f64 / 4000.0).sin())
            .collect();
        let bytes = encode_wav(&wave, 4000).unwrap();
        let (rec, iv) = parse_recording("9947", Location::PV, &bytes, "").unwrap();
        assert_eq!(rec.sample_rate_hz, 4000);
        assert_eq!(rec.samples.len(), 4000);
        assert!(iv.is_empty());
        for (a, b) in wave.iter().zip(&rec.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_rejected() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 4000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
            for _ in 0..8 {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
        }
        let err = parse_recording("1", Location::AV, buf.get_ref(), "").unwrap_err();
        assert!(err.to_string().contains("mono"));
        let err = parse_recording("1", Location::AV, b"RIFFjunk", "").unwrap_err();
        assert!(err.to_string().contains("malformed header"));
    }

    #[test]
    fn segmentation_diagnostics_name_the_row() {
        let overlapping = tsv(&[(0.0, 0.1, 1), (0.05, 0.2, 2)]);
        match parse_segmentation(&overlapping, None).unwrap_err() {
            Error::Segmentation { row, .. } => assert_eq!(row, 2),
            e => panic!("unexpected {e}"),
        }
        let inverted = tsv(&[(0.0, 0.1, 1), (0.3, 0.2, 2)]);
        assert!(matches!(
            parse_segmentation(&inverted, None),
            Err(Error::Segmentation { row: 2, .. })
        ));
        let bad_state = "0\t0.1\t7\n";
        assert!(matches!(
            parse_segmentation(bad_state, None),
            Err(Error::Segmentation { row: 1, .. })
        ));
        let too_long = tsv(&[(0.0, 0.1, 1), (0.1, 2.5, 2)]);
        assert!(matches!(
            parse_segmentation(&too_long, Some(2.0)),
            Err(Error::Segmentation { row: 2, .. })
        ));
        let two_fields = "0\t0.1\n";
        assert!(parse_segmentation(two_fields, None).is_err());
    }

    #[test]
    fn adjacent_intervals_accepted() {
        let ok = tsv(&[(0.0, 0.1, 1), (0.1, 0.26, 2), (0.26, 0.3, 3)]);
        let iv = parse_segmentation(&ok, Some(1.0)).unwrap();
        assert_eq!(iv.len(), 3);
        assert_eq!(iv[1].state, HeartState::Systole);
    }
}
