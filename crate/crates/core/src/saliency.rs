//! Input-gradient saliency maps and per-segment contribution shares.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::net::{ensemble_forward_on_tape, EnsembleParams};
use crate::pcg_data::{LabelGroup, Sample};
use crate::{Error, Result};

/// Non-negative `n × len` map aligned with a sample's segment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub n: usize,
    pub len: usize,
    pub group: LabelGroup,
    pub class: usize,
}

impl SaliencyMap {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.len..(i + 1) * self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributions {
    /// Percent of total saliency per segment.
    pub percent: Vec<f64>,
    /// Set when the map was all zero and the split is uniform by fiat.
    pub degenerate: bool,
}

/// `|∂ target / ∂ input|` for every input leaf, where `build` records the
/// computation and returns the scalar target.
pub fn gradient_saliency<F>(inputs: &[Tensor], build: F) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let store = crate::autodiff::ParamStore::new();
    let mut tape = Tape::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let target = build(&mut tape, &vars)?;
    let grads = tape.backward(target)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            let mut g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for x in g.data_mut() {
                *x = x.abs();
            }
            g
        })
        .collect())
}

/// Saliency of one group logit (pre-softmax). `class` defaults to the
/// predicted class of that group.
pub fn input_saliency(
    params: &EnsembleParams,
    sample: &Sample,
    group: LabelGroup,
    class: Option<usize>,
) -> Result<SaliencyMap> {
    if let Some(c) = class {
        if c >= group.width() {
            return Err(Error::InvalidArgument(format!(
                "class {c} outside {} range [0, {})",
                group.name(),
                group.width()
            )));
        }
    }
    let mut tape = Tape::new(&params.store);
    let vars = ensemble_forward_on_tape(&mut tape, params, sample)?;
    let logits = vars.group_logits(group);
    let class = match class {
        Some(c) => c,
        None => crate::pcg_data::argmax(tape.value(logits).data()),
    };
    let target = tape.select(logits, class)?;
    let grads = tape.backward(target)?;
    let mut values = Vec::with_capacity(sample.n * sample.len);
    for img in &vars.images {
        match grads.wrt(*img) {
            Some(g) => values.extend(g.data().iter().map(|v| v.abs())),
            None => values.extend(std::iter::repeat(0.0).take(sample.len)),
        }
    }
    Ok(SaliencyMap {
        values,
        n: sample.n,
        len: sample.len,
        group,
        class,
    })
}

/// Each segment's share of the total saliency, in percent.
pub fn segment_contributions(map: &SaliencyMap) -> Contributions {
    let sums: Vec<f64> = (0..map.n).map(|i| map.row(i).iter().sum()).collect();
    let total: f64 = sums.iter().sum();
    if total > 0.0 {
        Contributions {
            percent: sums.iter().map(|s| 100.0 * s / total).collect(),
            degenerate: false,
        }
    } else {
        Contributions {
            percent: vec![100.0 / map.n as f64; map.n],
            degenerate: true,
        }
    }
}

/// CSV text: a header naming the target, then one row per segment with its
/// index, contribution and saliency values.
pub fn saliency_csv(map: &SaliencyMap, contributions: &Contributions) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "segment[{}={}],contribution_pct",
        map.group.name(),
        map.class
    );
    for j in 0..map.len {
        let _ = write!(out, ",v{j}");
    }
    out.push('\n');
    for i in 0..map.n {
        let _ = write!(out, "{i},{:.11e}", contributions.percent[i]);
        for v in map.row(i) {
            let _ = write!(out, ",{v:.11e}");
        }
        out.push('\n');
    }
    out
}

pub fn export_saliency(map: &SaliencyMap, contributions: &Contributions, path: &Path) -> Result<()> {
    fs::write(path, saliency_csv(map, contributions)).map_err(|e| Error::io(path, e))
}

/// Parses [`saliency_csv`] output back into a map and contributions.
pub fn parse_saliency_csv(text: &str) -> Result<(SaliencyMap, Contributions)> {
    let bad = |m: String| Error::InvalidArgument(format!("saliency csv: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let first = header.split(',').next().unwrap_or_default();
    let target = first
        .strip_prefix("segment[")
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| bad(format!("header cell {first:?}")))?;
    let (group, class) = target
        .split_once('=')
        .ok_or_else(|| bad(format!("target {target:?}")))?;
    let group = LabelGroup::from_name(group)?;
    let class: usize = class.parse().map_err(|_| bad(format!("class {class:?}")))?;
    let len = header.split(',').count() - 2;
    let mut values = Vec::new();
    let mut percent = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != len + 2 {
            return Err(bad(format!("row {i} has {} cells", cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {i}: {s:?}")));
        percent.push(num(cells[1])?);
        for c in &cells[2..] {
            values.push(num(c)?);
        }
    }
    let n = percent.len();
    let degenerate = values.iter().all(|&v| v == 0.0);
    Ok((
        SaliencyMap {
            values,
            n,
            len,
            group,
            class,
        },
        Contributions {
            percent,
            degenerate,
        },
    ))
}
