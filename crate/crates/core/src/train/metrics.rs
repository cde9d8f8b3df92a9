use serde::{Deserialize, Serialize};

use crate::pcg_data::{LabelGroup, LabelSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

impl GroupMetrics {
    fn mean(items: &[GroupMetrics]) -> GroupMetrics {
        let n = items.len().max(1) as f64;
        let precision = items.iter().map(|m| m.precision).sum::<f64>() / n;
        let sensitivity = items.iter().map(|m| m.sensitivity).sum::<f64>() / n;
        let specificity = items.iter().map(|m| m.specificity).sum::<f64>() / n;
        GroupMetrics {
            precision,
            sensitivity,
            specificity,
            f1: harmonic(precision, sensitivity),
        }
    }
}

/// Per-group and macro-averaged sample-level metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub groups: [GroupMetrics; 5],
    pub macro_avg: GroupMetrics,
}

impl MetricsReport {
    pub fn group(&self, g: LabelGroup) -> GroupMetrics {
        self.groups[g.index()]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, s: f64) -> f64 {
    if p + s > 0.0 {
        2.0 * p * s / (p + s)
    } else {
        0.0
    }
}

/// One-vs-rest precision, sensitivity and specificity per class, averaged
/// over the classes that occur in either list. F1 is the harmonic mean of
/// the averaged precision and sensitivity, so the identity holds at every
/// level of the report.
pub fn compute_metrics(predictions: &[LabelSet], truths: &[LabelSet]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let mut groups = [GroupMetrics::default(); 5];
    for g in LabelGroup::ALL {
        let width = g.width();
        // confusion[truth][pred]
        let mut confusion = vec![vec![0usize; width]; width];
        for (p, t) in predictions.iter().zip(truths) {
            confusion[t.get(g)][p.get(g)] += 1;
        }
        let n = truths.len();
        let mut per_class = Vec::new();
        for c in 0..width {
            let tp = confusion[c][c];
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            if actual == 0 && predicted == 0 {
                continue;
            }
            let fp = predicted - tp;
            let fn_ = actual - tp;
            let tn = n - tp - fp - fn_;
            per_class.push(GroupMetrics {
                precision: ratio(tp, tp + fp),
                sensitivity: ratio(tp, tp + fn_),
                specificity: ratio(tn, tn + fp),
                f1: 0.0,
            });
        }
        groups[g.index()] = GroupMetrics::mean(&per_class);
    }
    Ok(MetricsReport {
        macro_avg: GroupMetrics::mean(&groups),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn timing(values: &[usize]) -> Vec<LabelSet> {
        values
            .iter()
            .map(|&t| LabelSet {
                timing: t as u8,
                ..LabelSet::NORMAL
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let sets: Vec<LabelSet> = LabelSet::all_combinations().step_by(37).collect();
        let r = compute_metrics(&sets, &sets).unwrap();
        for m in r.groups.iter().chain([&r.macro_avg]) {
            assert_eq!((m.precision, m.sensitivity, m.specificity, m.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn hand_counted_timing_case() {
        let r = compute_metrics(&timing(&[0, 1, 2, 2]), &timing(&[0, 1, 1, 2])).unwrap();
        let t = r.group(LabelGroup::Timing);
        assert!((t.precision - 2.5 / 3.0).abs() < 1e-12);
        assert!((t.sensitivity - 2.5 / 3.0).abs() < 1e-12);
        // Specificities: class 0 3/3, class 1 2/2, class 2 2/3.
        assert!((t.specificity - (1.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((t.f1 - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(compute_metrics(&timing(&[0]), &timing(&[0, 1])).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn f1_identity_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let all: Vec<LabelSet> = LabelSet::all_combinations().collect();
        for _ in 0..50 {
            let n = rng.gen_range(1..30);
            let p: Vec<_> = (0..n).map(|_| all[rng.gen_range(0..all.len())]).collect();
            let t: Vec<_> = (0..n).map(|_| all[rng.gen_range(0..all.len())]).collect();
            let r = compute_metrics(&p, &t).unwrap();
            for m in r.groups.iter().chain([&r.macro_avg]) {
                for v in [m.precision, m.sensitivity, m.specificity, m.f1] {
                    assert!((0.0..=1.0).contains(&v));
                }
                if m.precision + m.sensitivity > 0.0 {
                    let h = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
                    assert!((m.f1 - h).abs() < 1e-12);
                }
            }
        }
    }
}
