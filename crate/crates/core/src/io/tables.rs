//! Plot-ready CSV tables. Numbers use the shortest text that reads back to
//! the same `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::pcg_data::{LabelGroup, Location, Sample};
use crate::train::{EpochRecord, GroupMetrics, MetricsReport, PatientAccuracy};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_f1,val_loss,val_f1\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            h.epoch,
            h.train_loss,
            h.train_f1,
            opt(h.val_loss),
            opt(h.val_f1)
        );
    }
    s
}

const METRIC_NAMES: [&str; 4] = ["precision", "sensitivity", "specificity", "f1"];

fn metric_values(m: &GroupMetrics) -> [f64; 4] {
    [m.precision, m.sensitivity, m.specificity, m.f1]
}

fn metrics_row(s: &mut String, label: &str, r: &MetricsReport) {
    s.push_str(label);
    for v in metric_values(&r.macro_avg) {
        let _ = write!(s, ",{v}");
    }
    for g in &r.groups {
        for v in metric_values(g) {
            let _ = write!(s, ",{v}");
        }
    }
    s.push('\n');
}

/// Element-wise mean of several reports.
pub fn average_reports(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> GroupMetrics| {
        let mut acc = GroupMetrics::default();
        for r in reports {
            let m = f(r);
            acc.precision += m.precision / n;
            acc.sensitivity += m.sensitivity / n;
            acc.specificity += m.specificity / n;
            acc.f1 += m.f1 / n;
        }
        acc
    };
    let mut out = first.clone();
    out.macro_avg = mean(&|r| r.macro_avg);
    for g in 0..5 {
        out.groups[g] = mean(&|r| r.groups[g]);
    }
    Some(out)
}

/// One row per fold, then `Avg` over the folds and `TD` for the holdout.
pub fn metrics_csv(folds: &[MetricsReport], holdout: Option<&MetricsReport>) -> String {
    let mut s = String::from("fold");
    for m in METRIC_NAMES {
        let _ = write!(s, ",{m}");
    }
    for g in LabelGroup::ALL {
        for m in METRIC_NAMES {
            let _ = write!(s, ",{}_{m}", g.name());
        }
    }
    s.push('\n');
    for (i, r) in folds.iter().enumerate() {
        metrics_row(&mut s, &(i + 1).to_string(), r);
    }
    if let Some(avg) = average_reports(folds) {
        metrics_row(&mut s, "Avg", &avg);
    }
    if let Some(td) = holdout {
        metrics_row(&mut s, "TD", td);
    }
    s
}

/// One row per model (location or pooled): group accuracies and average.
pub fn patient_accuracy_csv(rows: &[(String, PatientAccuracy)]) -> String {
    let mut s = String::from("model,patients");
    for g in LabelGroup::ALL {
        let _ = write!(s, ",{}", g.name());
    }
    s.push_str(",average\n");
    for (name, acc) in rows {
        let _ = write!(s, "{name},{}", acc.patients);
        for v in acc.groups {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", acc.average);
    }
    s
}

/// Sample counts and normal/murmur ratio per location, plus a total row.
pub fn location_report(samples: &[Sample]) -> String {
    let mut counts: BTreeMap<Location, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let e = counts.entry(s.location).or_default();
        if s.labels.has_murmur() {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    let mut out = format!("{:<8}{:>10}{:>10}{:>10}{:>16}\n", "location", "samples", "normal", "murmur", "normal:murmur");
    let mut total = (0, 0);
    let mut line = |name: &str, (normal, murmur): (usize, usize)| {
        let ratio = if murmur == 0 {
            "-".to_string()
        } else {
            format!("{:.2}:1", normal as f64 / murmur as f64)
        };
        let _ = writeln!(out, "{name:<8}{:>10}{normal:>10}{murmur:>10}{ratio:>16}", normal + murmur);
    };
    for (loc, c) in &counts {
        line(loc.as_str(), *c);
        total = (total.0 + c.0, total.1 + c.1);
    }
    line("total", total);
    out
}
