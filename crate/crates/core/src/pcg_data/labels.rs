use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Location;
use crate::{Error, Result};

/// One-hot widths of the five groups, in encoding order. Index 0 of every
/// group is "murmur absent".
pub const GROUP_WIDTHS: [usize; 5] = [5, 4, 4, 5, 4];

/// Length of the concatenated one-hot label vector.
pub const ENCODED_WIDTH: usize = 22;

const _: () = {
    let mut sum = 0;
    let mut i = 0;
    while i < GROUP_WIDTHS.len() {
        sum += GROUP_WIDTHS[i];
        i += 1;
    }
    assert!(sum == ENCODED_WIDTH);
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelGroup {
    Timing,
    Pitch,
    Quality,
    Shape,
    Grading,
}

impl LabelGroup {
    pub const ALL: [LabelGroup; 5] = [
        LabelGroup::Timing,
        LabelGroup::Pitch,
        LabelGroup::Quality,
        LabelGroup::Shape,
        LabelGroup::Grading,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn width(self) -> usize {
        GROUP_WIDTHS[self.index()]
    }

    /// Offset of this group's block in the 22-dim encoding.
    pub fn offset(self) -> usize {
        GROUP_WIDTHS[..self.index()].iter().sum()
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelGroup::Timing => "timing",
            LabelGroup::Pitch => "pitch",
            LabelGroup::Quality => "quality",
            LabelGroup::Shape => "shape",
            LabelGroup::Grading => "grading",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            LabelGroup::Timing => "Timing",
            LabelGroup::Pitch => "Pitch",
            LabelGroup::Quality => "Quality",
            LabelGroup::Shape => "Shape",
            LabelGroup::Grading => "Grading",
        }
    }

    /// Category names, index 0 being "Normal".
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            LabelGroup::Timing => &[
                "Normal",
                "Early-systolic",
                "Mid-systolic",
                "Late-systolic",
                "Holosystolic",
            ],
            LabelGroup::Pitch => &["Normal", "High", "Medium", "Low"],
            LabelGroup::Quality => &["Normal", "Musical", "Blowing", "Harsh"],
            LabelGroup::Shape => &["Normal", "Crescendo", "Decrescendo", "Diamond", "Plateau"],
            LabelGroup::Grading => &["Normal", "I/VI", "II/VI", "III/VI"],
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        self.class_names().get(class).copied().unwrap_or("?")
    }

    /// Resolves a category name; `nan` (and `Normal`) map to class 0.
    pub fn parse_class(self, name: &str) -> Result<usize> {
        let norm = normalize_name(name);
        if norm == "nan" || norm.is_empty() {
            return Ok(0);
        }
        self.class_names()
            .iter()
            .position(|c| normalize_name(c) == norm)
            .ok_or_else(|| Error::Label(format!("unknown {} category {name:?}", self.name())))
    }

    pub fn from_name(name: &str) -> Result<LabelGroup> {
        LabelGroup::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label group {name:?}")))
    }
}

impl fmt::Display for LabelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// The five exclusive categorical murmur labels. All zero means no murmur.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet {
    pub timing: u8,
    pub pitch: u8,
    pub quality: u8,
    pub shape: u8,
    pub grading: u8,
}

impl LabelSet {
    pub const NORMAL: LabelSet = LabelSet {
        timing: 0,
        pitch: 0,
        quality: 0,
        shape: 0,
        grading: 0,
    };

    /// Builds a label set from group values in encoding order, checking
    /// ranges and the all-zero / all-nonzero consistency rule.
    pub fn new(values: [usize; 5]) -> Result<LabelSet> {
        let set = LabelSet::from_array_unchecked(values)?;
        set.validate()?;
        Ok(set)
    }

    fn from_array_unchecked(values: [usize; 5]) -> Result<LabelSet> {
        for (g, &v) in LabelGroup::ALL.iter().zip(&values) {
            if v >= g.width() {
                return Err(Error::Label(format!(
                    "{} value {v} out of range [0, {})",
                    g.name(),
                    g.width()
                )));
            }
        }
        Ok(LabelSet {
            timing: values[0] as u8,
            pitch: values[1] as u8,
            quality: values[2] as u8,
            shape: values[3] as u8,
            grading: values[4] as u8,
        })
    }

    pub fn to_array(self) -> [usize; 5] {
        [
            self.timing as usize,
            self.pitch as usize,
            self.quality as usize,
            self.shape as usize,
            self.grading as usize,
        ]
    }

    pub fn get(self, group: LabelGroup) -> usize {
        self.to_array()[group.index()]
    }

    pub fn is_normal(self) -> bool {
        self == LabelSet::NORMAL
    }

    pub fn has_murmur(self) -> bool {
        !self.is_normal()
    }

    pub fn validate(self) -> Result<()> {
        let values = self.to_array();
        for (g, &v) in LabelGroup::ALL.iter().zip(&values) {
            if v >= g.width() {
                return Err(Error::Label(format!("{} value {v} out of range", g.name())));
            }
        }
        let zeros = values.iter().filter(|&&v| v == 0).count();
        if zeros != 0 && zeros != 5 {
            return Err(Error::Label(format!(
                "inconsistent label set {values:?}: groups must be all zero or all nonzero"
            )));
        }
        Ok(())
    }

    /// Iterates over every valid combination of group values in range,
    /// including the mixed zero/nonzero ones.
    pub fn all_combinations() -> impl Iterator<Item = LabelSet> {
        let total: usize = GROUP_WIDTHS.iter().product();
        (0..total).map(|mut code| {
            let mut values = [0usize; 5];
            for (v, &w) in values.iter_mut().zip(&GROUP_WIDTHS).rev() {
                *v = code % w;
                code /= w;
            }
            LabelSet::from_array_unchecked(values).expect("in range by construction")
        })
    }

    pub fn describe(self) -> String {
        LabelGroup::ALL
            .iter()
            .map(|g| format!("{}: {}", g.title(), g.class_name(self.get(*g))))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Concatenation of the five one-hot blocks, widths (5, 4, 4, 5, 4).
pub fn encode_labels(labels: LabelSet) -> Result<[f64; ENCODED_WIDTH]> {
    let mut out = [0.0; ENCODED_WIDTH];
    for g in LabelGroup::ALL {
        let v = labels.get(g);
        if v >= g.width() {
            return Err(Error::Label(format!("{} value {v} out of range", g.name())));
        }
        out[g.offset() + v] = 1.0;
    }
    Ok(out)
}

/// Per-block argmax of a 22-dim score vector; ties go to the lowest index.
pub fn decode_labels(scores: &[f64]) -> Result<LabelSet> {
    if scores.len() != ENCODED_WIDTH {
        return Err(Error::Shape(format!(
            "label vector has length {}, expected {ENCODED_WIDTH}",
            scores.len()
        )));
    }
    let mut values = [0usize; 5];
    for g in LabelGroup::ALL {
        let block = &scores[g.offset()..g.offset() + g.width()];
        values[g.index()] = argmax(block);
    }
    LabelSet::from_array_unchecked(values)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MurmurStatus {
    Present,
    Absent,
    Unknown,
}

impl MurmurStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MurmurStatus::Present => "Present",
            MurmurStatus::Absent => "Absent",
            MurmurStatus::Unknown => "Unknown",
        }
    }
}

/// Patient-level annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientLabels {
    pub patient_id: String,
    pub murmur: MurmurStatus,
    pub audible_locations: BTreeSet<Location>,
    pub label_set: LabelSet,
}

impl PatientLabels {
    pub fn validate(&self) -> Result<()> {
        self.label_set.validate()?;
        match self.murmur {
            MurmurStatus::Absent if self.label_set.has_murmur() => Err(Error::Label(format!(
                "patient {}: murmur Absent but labels {:?}",
                self.patient_id, self.label_set
            ))),
            MurmurStatus::Present if self.label_set.is_normal() => Err(Error::Label(format!(
                "patient {}: murmur Present but all labels are nan",
                self.patient_id
            ))),
            _ => Ok(()),
        }
    }

    /// Labels that apply to the recording taken at `location`: the patient's
    /// set where the murmur was heard, normal elsewhere.
    pub fn recording_labels(&self, location: Location) -> LabelSet {
        if self.murmur == MurmurStatus::Present && self.audible_locations.contains(&location) {
            self.label_set
        } else {
            LabelSet::NORMAL
        }
    }
}

const LABEL_KEYS: [&str; 8] = [
    "patient_id",
    "murmur",
    "locations",
    "timing",
    "pitch",
    "quality",
    "shape",
    "grading",
];

/// Parses the `key: value` patient label file.
pub fn parse_patient_labels(text: &str) -> Result<PatientLabels> {
    let mut fields: [Option<String>; 8] = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            Error::Label(format!("line {}: expected `key: value`", lineno + 1))
        })?;
        let key = key.trim();
        let slot = LABEL_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Label(format!("line {}: unknown key {key:?}", lineno + 1)))?;
        if fields[slot].is_some() {
            return Err(Error::Label(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
        fields[slot] = Some(value.trim().to_string());
    }
    let take = |i: usize| {
        fields[i]
            .clone()
            .ok_or_else(|| Error::Label(format!("missing key {:?}", LABEL_KEYS[i])))
    };

    let patient_id = take(0)?;
    let murmur = match take(1)?.to_ascii_lowercase().as_str() {
        "present" => MurmurStatus::Present,
        "absent" => MurmurStatus::Absent,
        "unknown" => MurmurStatus::Unknown,
        other => return Err(Error::Label(format!("unknown murmur status {other:?}"))),
    };
    let locations_raw = take(2)?;
    let mut audible_locations = BTreeSet::new();
    if !locations_raw.is_empty() && !locations_raw.eq_ignore_ascii_case("nan") {
        for part in locations_raw.split([',', '+']) {
            audible_locations.insert(part.parse::<Location>()?);
        }
    }
    let mut values = [0usize; 5];
    for g in LabelGroup::ALL {
        values[g.index()] = g.parse_class(&take(3 + g.index())?)?;
    }
    let label_set = LabelSet::new(values)?;
    let labels = PatientLabels {
        patient_id,
        murmur,
        audible_locations,
        label_set,
    };
    labels.validate()?;
    Ok(labels)
}

pub fn write_patient_labels(labels: &PatientLabels) -> String {
    let locations = if labels.audible_locations.is_empty() {
        "nan".to_string()
    } else {
        labels
            .audible_locations
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = format!(
        "patient_id: {}\nmurmur: {}\nlocations: {locations}\n",
        labels.patient_id,
        labels.murmur.as_str()
    );
    for g in LabelGroup::ALL {
        let v = labels.label_set.get(g);
        let name = if v == 0 { "nan" } else { g.class_name(v) };
        out.push_str(&format!("{}: {name}\n", g.name()));
    }
    out
}
