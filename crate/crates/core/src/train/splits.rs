use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pcg_data::{Location, RecordingKey, Sample};
use crate::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;

/// Holdout set plus `k` cross-validation folds, as sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub holdout_fraction: f64,
    pub stratified: bool,
    pub holdout: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every non-holdout index, ascending.
    pub fn development(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    /// `(train, validation)` indices for fold `i`.
    pub fn fold(&self, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let val = self
            .folds
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("fold {i} of {}", self.k())))?
            .clone();
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        Ok((train, val))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SplitPlan> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Holds out whole recordings per location until roughly
/// `holdout_fraction` of that location's samples are set aside, then deals
/// the remaining samples into `k` near-equal folds.
///
/// With `stratify`, fold assignment deals each label combination round-robin
/// so class proportions stay close across folds.
pub fn make_splits(
    samples: &[Sample],
    k: usize,
    holdout_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need at least 2 folds")));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_location: BTreeMap<Location, BTreeMap<RecordingKey, Vec<usize>>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_location
            .entry(s.location)
            .or_default()
            .entry(s.key())
            .or_default()
            .push(i);
    }
    let mut holdout = Vec::new();
    for recordings in by_location.values() {
        let total: usize = recordings.values().map(Vec::len).sum();
        let target = (holdout_fraction * total as f64).round() as usize;
        let mut keys: Vec<&RecordingKey> = recordings.keys().collect();
        keys.shuffle(&mut rng);
        let mut taken = 0;
        for key in keys {
            if taken >= target {
                break;
            }
            let idx = &recordings[key];
            // Skip a recording that would overshoot by more than it helps.
            if taken + idx.len() > target && (taken + idx.len() - target) > (target - taken) {
                continue;
            }
            taken += idx.len();
            holdout.extend_from_slice(idx);
        }
    }
    holdout.sort_unstable();

    let mut in_holdout = vec![false; samples.len()];
    for &i in &holdout {
        in_holdout[i] = true;
    }
    let mut rest: Vec<usize> = (0..samples.len()).filter(|&i| !in_holdout[i]).collect();
    if rest.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} samples left for {k} folds",
            rest.len()
        )));
    }
    rest.shuffle(&mut rng);
    if stratify {
        // Stable sort keeps the shuffled order within each label combination.
        rest.sort_by_key(|&i| samples[i].labels.to_array());
    }
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in rest.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(SplitPlan {
        seed,
        holdout_fraction,
        stratified: stratify,
        holdout,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcg_data::LabelSet;
    use proptest::prelude::*;

    fn samples(per_recording: &[(usize, Location)]) -> Vec<Sample> {
        let mut out = Vec::new();
        for (r, &(count, location)) in per_recording.iter().enumerate() {
            for j in 0..count {
                out.push(Sample {
                    segments: vec![0.0; 4],
                    n: 1,
                    len: 4,
                    labels: if r % 2 == 0 {
                        LabelSet::NORMAL
                    } else {
                        LabelSet::new([1, 1, 1, 1, 1]).unwrap()
                    },
                    patient_id: format!("{r}"),
                    location,
                    pad_count: 0,
                    source_indices: vec![j],
                });
            }
        }
        out
    }

    fn check_partition(plan: &SplitPlan, n: usize) {
        let mut seen = vec![0; n];
        for &i in plan.holdout.iter().chain(plan.folds.iter().flatten()) {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn hundred_development_samples_give_equal_folds() {
        let s = samples(&[(1, Location::AV); 100]);
        let plan = make_splits(&s, 10, 0.0, 3, false).unwrap();
        assert!(plan.holdout.is_empty());
        assert!(plan.folds.iter().all(|f| f.len() == 10));
        check_partition(&plan, 100);
    }

    #[test]
    fn recordings_never_straddle_holdout() {
        let layout: Vec<(usize, Location)> = (0..40)
            .map(|i| (1 + i % 7, Location::ALL[i % 4]))
            .collect();
        let s = samples(&layout);
        let plan = make_splits(&s, 5, 0.1, 9, false).unwrap();
        check_partition(&plan, s.len());
        let held: std::collections::BTreeSet<_> = plan.holdout.iter().map(|&i| s[i].key()).collect();
        for i in plan.development() {
            assert!(!held.contains(&s[i].key()));
        }
        assert!(!plan.holdout.is_empty());
        let frac = plan.holdout.len() as f64 / s.len() as f64;
        assert!((0.03..0.2).contains(&frac), "{frac}");
    }

    #[test]
    fn seed_determines_plan_and_json_roundtrips() {
        let s = samples(&[(3, Location::MV); 30]);
        let a = make_splits(&s, 4, 0.1, 1, true).unwrap();
        let b = make_splits(&s, 4, 0.1, 1, true).unwrap();
        assert_eq!(a, b);
        let c = make_splits(&s, 4, 0.1, 2, true).unwrap();
        assert_ne!(a, c);
        assert_eq!(SplitPlan::from_json(&a.to_json().unwrap()).unwrap(), a);
        let (train, val) = a.fold(1).unwrap();
        assert_eq!(train.len() + val.len(), a.development().len());
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = samples(&[(1, Location::AV); 3]);
        assert!(make_splits(&s, 10, 0.0, 0, false).is_err());
        assert!(make_splits(&s, 1, 0.0, 0, false).is_err());
    }

    proptest! {
        #[test]
        fn always_a_partition(counts in prop::collection::vec(1usize..6, 12..40), seed in 0u64..500, k in 2usize..6, strat: bool) {
            let layout: Vec<_> = counts.iter().enumerate().map(|(i, &c)| (c, Location::ALL[i % 5])).collect();
            let s = samples(&layout);
            let plan = make_splits(&s, k, 0.1, seed, strat).unwrap();
            let mut seen = vec![0; s.len()];
            for &i in plan.holdout.iter().chain(plan.folds.iter().flatten()) {
                seen[i] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
