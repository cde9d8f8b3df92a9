use serde::{Deserialize, Serialize};

use crate::pcg_data::{DEFAULT_SEGMENTS_PER_SAMPLE, DEFAULT_SEGMENT_LENGTH, GROUP_WIDTHS};
use crate::{Error, Result};

/// Per-segment encoder: a 3×3 stem convolution, then dense blocks separated
/// by 2×2 average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    pub block_depths: Vec<usize>,
    pub growth_rate: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stem_channels: 8,
            block_depths: vec![2, 2],
            growth_rate: 8,
        }
    }
}

impl EncoderConfig {
    pub fn output_channels(&self) -> usize {
        self.stem_channels + self.block_depths.iter().sum::<usize>() * self.growth_rate
    }

    pub fn downsampling(&self) -> usize {
        1 << self.block_depths.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Segments per sample.
    pub segments: usize,
    /// Points per segment; must be a perfect square.
    pub segment_length: usize,
    pub encoder: EncoderConfig,
    /// The merged map is average-pooled to `head_grid × head_grid` before
    /// each group's affine head.
    pub head_grid: usize,
    /// Weight of the global binary cross-entropy term.
    pub global_weight: f64,
    pub group_widths: [usize; 5],
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            segments: DEFAULT_SEGMENTS_PER_SAMPLE,
            segment_length: DEFAULT_SEGMENT_LENGTH,
            encoder: EncoderConfig::default(),
            head_grid: 4,
            global_weight: 1.0,
            group_widths: GROUP_WIDTHS,
        }
    }
}

impl NetConfig {
    /// Desk-scale configuration: 8×8 segment images (64 points), two dense
    /// blocks of depth 2 with growth 8.
    pub fn tiny() -> Self {
        NetConfig {
            segments: 4,
            segment_length: 64,
            encoder: EncoderConfig {
                stem_channels: 8,
                block_depths: vec![2, 2],
                growth_rate: 8,
            },
            head_grid: 4,
            global_weight: 1.0,
            group_widths: GROUP_WIDTHS,
        }
    }

    /// Side `s` of the `s × s` segment image.
    pub fn side(&self) -> usize {
        integer_sqrt(self.segment_length)
    }

    /// `(h, w, channels)` of one encoded segment.
    pub fn encoder_output(&self) -> (usize, usize, usize) {
        let s = self.side() / self.encoder.downsampling();
        (s, s, self.encoder.output_channels())
    }

    pub fn global_feature_len(&self) -> usize {
        let (h, w, c) = self.encoder_output();
        h * w * c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.segments == 0 {
            return bad("segments must be ≥ 1".into());
        }
        let s = self.side();
        if s < 2 || s * s != self.segment_length {
            return bad(format!(
                "segment_length {} is not a perfect square ≥ 4",
                self.segment_length
            ));
        }
        if self.group_widths != GROUP_WIDTHS {
            return bad(format!(
                "group widths {:?} differ from the label encoding {:?}",
                self.group_widths, GROUP_WIDTHS
            ));
        }
        let e = &self.encoder;
        if e.stem_channels == 0 || e.growth_rate == 0 || e.block_depths.is_empty() {
            return bad("encoder needs stem channels, growth rate and at least one block".into());
        }
        if s % e.downsampling() != 0 {
            return bad(format!(
                "image side {s} not divisible by encoder downsampling {}",
                e.downsampling()
            ));
        }
        let (h, _, _) = self.encoder_output();
        if self.head_grid == 0 || h % self.head_grid != 0 {
            return bad(format!(
                "head grid {} does not divide encoded side {h}",
                self.head_grid
            ));
        }
        if !(self.global_weight >= 0.0 && self.global_weight.is_finite()) {
            return bad(format!("global_weight {} must be ≥ 0", self.global_weight));
        }
        Ok(())
    }
}

fn integer_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetConfig::default().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
        assert_eq!(NetConfig::default().side(), 32);
        assert_eq!(NetConfig::default().encoder_output(), (16, 16, 40));
        assert_eq!(NetConfig::tiny().encoder_output(), (4, 4, 40));
    }

    #[test]
    fn non_square_length_rejected() {
        let cfg = NetConfig {
            segment_length: 1000,
            ..NetConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = NetConfig {
            head_grid: 3,
            ..NetConfig::tiny()
        };
        assert!(cfg.validate().is_err());
        let cfg = NetConfig {
            global_weight: -1.0,
            ..NetConfig::tiny()
        };
        assert!(cfg.validate().is_err());
    }
}
