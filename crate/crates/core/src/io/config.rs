use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::net::{EncoderConfig, NetConfig};
use crate::pcg_data::Standardization;
use crate::train::{TrainConfig, DEFAULT_FOLDS, DEFAULT_HOLDOUT_FRACTION};
use crate::{Error, Result};

/// Four per-location models, or one model pooled over all locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    PositionDependent,
    PositionIndependent,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PositionDependent => "position-dependent",
            Regime::PositionIndependent => "position-independent",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "position-dependent" | "dependent" => Ok(Regime::PositionDependent),
            "position-independent" | "independent" | "pooled" => Ok(Regime::PositionIndependent),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub folds: usize,
    pub holdout_fraction: f64,
    pub stratify: bool,
    pub regime: Regime,
    pub standardization: Standardization,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            folds: DEFAULT_FOLDS,
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            stratify: false,
            regime: Regime::PositionDependent,
            standardization: Standardization::UnitVariance,
            manifest: None,
            out_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Small network suited to single-core runs on synthetic data.
    pub fn tiny() -> Self {
        RunConfig {
            net: NetConfig::tiny(),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {}, need ≥ 2", self.folds)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction {} outside [0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    /// Parses flat `key = value` lines on top of the defaults. Blank lines
    /// and `#` comments are ignored; unknown or repeated keys are errors.
    /// `preset = tiny` must come first if present.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" && !seen.is_empty() {
                return Err(Error::Config(format!("line {}: preset must come first", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "preset" {
            match value {
                "tiny" => *self = RunConfig::tiny(),
                "default" => *self = RunConfig::default(),
                other => return Err(Error::Config(format!("unknown preset {other:?}"))),
            }
            return Ok(());
        }
        let net = &mut self.net;
        let train = &mut self.train;
        match key {
            "segments" => net.segments = parse(key, value)?,
            "segment_length" => net.segment_length = parse(key, value)?,
            "stem_channels" => net.encoder.stem_channels = parse(key, value)?,
            "block_depths" => {
                net.encoder.block_depths = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "growth_rate" => net.encoder.growth_rate = parse(key, value)?,
            "head_grid" => net.head_grid = parse(key, value)?,
            "global_weight" => net.global_weight = parse(key, value)?,
            "learning_rate" => train.learning_rate = parse(key, value)?,
            "batch_size" => train.batch_size = parse(key, value)?,
            "max_epochs" => train.max_epochs = parse(key, value)?,
            "patience" => train.patience = optional(key, value)?,
            "stop_at_train_f1" => train.stop_at_train_f1 = optional(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, value)?,
            "stratify" => self.stratify = parse(key, value)?,
            "regime" => self.regime = value.parse()?,
            "standardization" => {
                self.standardization = match value {
                    "unit-variance" => Standardization::UnitVariance,
                    "mean-only" => Standardization::MeanOnly,
                    other => return Err(Error::Config(format!("unknown standardization {other:?}"))),
                }
            }
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let n = &self.net;
        let t = &self.train;
        let EncoderConfig {
            stem_channels,
            block_depths,
            growth_rate,
        } = &n.encoder;
        let mut s = String::new();
        let depths: Vec<String> = block_depths.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "segments = {}", n.segments);
        let _ = writeln!(s, "segment_length = {}", n.segment_length);
        let _ = writeln!(s, "stem_channels = {stem_channels}");
        let _ = writeln!(s, "block_depths = {}", depths.join(","));
        let _ = writeln!(s, "growth_rate = {growth_rate}");
        let _ = writeln!(s, "head_grid = {}", n.head_grid);
        let _ = writeln!(s, "global_weight = {:?}", n.global_weight);
        let _ = writeln!(s, "learning_rate = {:?}", t.learning_rate);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "patience = {}", opt(t.patience.map(|p| p.to_string())));
        let _ = writeln!(
            s,
            "stop_at_train_f1 = {}",
            opt(t.stop_at_train_f1.map(|p| format!("{p:?}")))
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "holdout_fraction = {:?}", self.holdout_fraction);
        let _ = writeln!(s, "stratify = {}", self.stratify);
        let _ = writeln!(s, "regime = {}", self.regime.as_str());
        let std_name = match self.standardization {
            Standardization::UnitVariance => "unit-variance",
            Standardization::MeanOnly => "mean-only",
        };
        let _ = writeln!(s, "standardization = {std_name}");
        if let Some(m) = &self.manifest {
            let _ = writeln!(s, "manifest = {}", m.display());
        }
        if let Some(o) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", o.display());
        }
        s
    }
}
