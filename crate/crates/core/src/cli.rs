//! Command implementations behind the `cardiolabel` binary. Each command is
//! a plain function so it can be driven from tests as well as the CLI.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::io::{
    history_csv, load_checkpoint, location_report, metrics_csv, patient_accuracy_csv,
    read_sample_store, save_checkpoint, write_sample_store, Checkpoint, Regime, RunConfig,
};
use crate::net::EnsembleParams;
use crate::pcg_data::manifest::{LoadedRecording, Manifest, PatientEntry, RecordingEntry};
use crate::pcg_data::{
    build_dataset_samples, encode_wav, generate_synthetic_dataset, prepare_recordings,
    recording_seed, write_patient_labels, write_segmentation, LabelGroup, LabelSet, Location,
    PreparedRecording, RecordingKey, Sample, SynthSpec,
};
use crate::saliency::{export_saliency, input_saliency, segment_contributions, Contributions};
use crate::train::{
    compute_metrics, evaluate, make_splits, patient_accuracy, patient_level_predict, train,
    ModelSet, PatientAccuracy, PatientRecording, SplitPlan,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const SPLITS_FILE: &str = "splits.json";
pub const CONFIG_FILE: &str = "run.conf";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub patients: usize,
    pub recordings: usize,
    pub manifest: PathBuf,
}

/// Writes a synthetic dataset as WAV, TSV and label files plus a manifest.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<SynthSummary> {
    let ds = generate_synthetic_dataset(spec, seed)?;
    let mut manifest = Manifest::default();
    for (rec, intervals) in ds.recordings.iter().zip(&ds.intervals) {
        let stem = format!("{}_{}", rec.patient_id, rec.location);
        let audio = PathBuf::from("audio").join(format!("{stem}.wav"));
        let segmentation = PathBuf::from("audio").join(format!("{stem}.tsv"));
        write(&out.join(&audio), encode_wav(&rec.samples, rec.sample_rate_hz)?)?;
        write(&out.join(&segmentation), write_segmentation(intervals))?;
        manifest.recordings.push(RecordingEntry {
            patient_id: rec.patient_id.clone(),
            location: rec.location,
            audio,
            segmentation,
        });
    }
    for p in &ds.patients {
        let labels = PathBuf::from("labels").join(format!("{}.txt", p.patient_id));
        write(&out.join(&labels), write_patient_labels(p))?;
        manifest.patients.push(PatientEntry {
            patient_id: p.patient_id.clone(),
            labels,
        });
    }
    let path = out.join(MANIFEST_FILE);
    write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(SynthSummary {
        patients: ds.patients.len(),
        recordings: ds.recordings.len(),
        manifest: path,
    })
}

fn load_manifest(path: &Path) -> Result<Vec<LoadedRecording>> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest.load(base)
}

fn prepare_from_manifest(path: &Path, cfg: &RunConfig) -> Result<Vec<PreparedRecording>> {
    let loaded = load_manifest(path)?;
    prepare_recordings(&loaded, cfg.net.segment_length, cfg.standardization)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub samples: usize,
    pub report: String,
    pub plan: SplitPlan,
}

/// Ingests a manifest into a sample store and a split plan under `out`,
/// together with a copy of the run configuration.
pub fn cmd_prepare(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<PrepareSummary> {
    cfg.validate()?;
    let prepared = prepare_from_manifest(manifest, cfg)?;
    let samples = build_dataset_samples(&prepared, cfg.net.segments, cfg.seed)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("manifest produced no samples".into()));
    }
    let plan = make_splits(&samples, cfg.folds, cfg.holdout_fraction, cfg.seed, cfg.stratify)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_sample_store(&samples, &out.join(SAMPLES_FILE))?;
    write(&out.join(SPLITS_FILE), plan.to_json()? + "\n")?;
    let mut snapshot = cfg.clone();
    snapshot.manifest = Some(fs::canonicalize(manifest).unwrap_or_else(|_| manifest.to_path_buf()));
    write(&out.join(CONFIG_FILE), snapshot.to_text())?;
    Ok(PrepareSummary {
        samples: samples.len(),
        report: location_report(&samples),
        plan,
    })
}

fn read_plan(dir: &Path) -> Result<SplitPlan> {
    SplitPlan::from_json(&read_to_string(&dir.join(SPLITS_FILE))?)
}

/// Models a regime trains: `(name, location filter)`.
fn model_slots(regime: Regime, samples: &[Sample]) -> Vec<(String, Option<Location>)> {
    match regime {
        Regime::PositionIndependent => vec![("pooled".into(), None)],
        Regime::PositionDependent => samples
            .iter()
            .map(|s| s.location)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|l| (l.as_str().to_string(), Some(l)))
            .collect(),
    }
}

fn pick(samples: &[Sample], indices: &[usize], location: Option<Location>) -> Vec<Sample> {
    indices
        .iter()
        .map(|&i| &samples[i])
        .filter(|s| location.map_or(true, |l| s.location == l))
        .cloned()
        .collect()
}

fn fold_name(model: &str, fold: usize) -> String {
    format!("{model}_fold{}", fold + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub models: Vec<String>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains every fold model and one final model per slot of the regime.
/// Fold models validate on their held-out fold; final models train on all
/// non-holdout samples.
pub fn cmd_train(prepared: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cmd_train_observed(prepared, cfg, out, |_| {})
}

/// [`cmd_train`] reporting each finished model name.
pub fn cmd_train_observed(
    prepared: &Path,
    cfg: &RunConfig,
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let samples = read_sample_store(&prepared.join(SAMPLES_FILE))?;
    let plan = read_plan(prepared)?;
    let models_dir = out.join("models");
    let history_dir = out.join("history");
    let mut summary = TrainSummary {
        models: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut job = 0;
    let mut run_one = |name: String,
                       location: Option<Location>,
                       train_idx: &[usize],
                       val_idx: &[usize]|
     -> Result<()> {
        let train_set = pick(&samples, train_idx, location);
        let val_set = pick(&samples, val_idx, location);
        if train_set.is_empty() {
            return Err(Error::InvalidArgument(format!("model {name} has no training samples")));
        }
        let seed = recording_seed(cfg.seed, job);
        job += 1;
        let outcome = train(&cfg.net, &cfg.train, &train_set, &val_set, seed)?;
        let ckpt = Checkpoint {
            run: cfg.clone(),
            params: outcome.params,
            seed,
            location,
            history: outcome.history,
        };
        let path = models_dir.join(format!("{name}.ckpt"));
        fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        save_checkpoint(&ckpt, &path)?;
        write(&history_dir.join(format!("{name}.csv")), history_csv(&ckpt.history))?;
        progress(&name);
        summary.models.push(name);
        summary.checkpoints.push(path);
        Ok(())
    };
    for (model, location) in model_slots(cfg.regime, &samples) {
        for fold in 0..plan.k() {
            let (tr, va) = plan.fold(fold)?;
            run_one(fold_name(&model, fold), location, &tr, &va)?;
        }
        run_one(model.clone(), location, &plan.development(), &[])?;
    }
    Ok(summary)
}

fn load_model(models_dir: &Path, name: &str, cfg: &RunConfig) -> Result<EnsembleParams> {
    let ckpt = load_checkpoint(&models_dir.join(format!("{name}.ckpt")))?;
    ckpt.require_net(&cfg.net)?;
    Ok(ckpt.params)
}

/// Loads the final model(s) of a regime from `models_dir`.
pub fn load_model_set(models_dir: &Path, cfg: &RunConfig) -> Result<ModelSet> {
    match cfg.regime {
        Regime::PositionIndependent => Ok(ModelSet::Pooled(load_model(models_dir, "pooled", cfg)?)),
        Regime::PositionDependent => {
            let mut map = BTreeMap::new();
            for l in Location::ALL {
                let path = models_dir.join(format!("{}.ckpt", l.as_str()));
                if path.exists() {
                    map.insert(l, load_model(models_dir, l.as_str(), cfg)?);
                }
            }
            if map.is_empty() {
                return Err(Error::Checkpoint(format!(
                    "no per-location checkpoints in {}",
                    models_dir.display()
                )));
            }
            Ok(ModelSet::PerLocation(map))
        }
    }
}

fn patient_recordings(prepared: &[PreparedRecording]) -> BTreeMap<String, Vec<PatientRecording>> {
    let mut by_patient: BTreeMap<String, Vec<PatientRecording>> = BTreeMap::new();
    for p in prepared {
        by_patient
            .entry(p.key.patient_id.clone())
            .or_default()
            .push(PatientRecording {
                patient_id: p.key.patient_id.clone(),
                location: p.key.location,
                murmur_present: p.murmur_present(),
                segments: p.segments.clone(),
            });
    }
    by_patient
}

/// Patient truth: the label set of any murmur-present recording, else normal.
fn patient_truth(recs: &[PreparedRecording]) -> LabelSet {
    recs.iter()
        .find(|r| r.murmur_present())
        .map_or(LabelSet::NORMAL, |r| r.labels)
}

/// Mode-vote accuracy over patients, using only the recordings in `keep`.
pub fn patient_level_accuracy(
    models: &ModelSet,
    prepared: &[PreparedRecording],
    keep: impl Fn(&RecordingKey) -> bool,
) -> Result<PatientAccuracy> {
    let chosen: Vec<PreparedRecording> = prepared
        .iter()
        .filter(|p| keep(&p.key) && !p.segments.is_empty())
        .filter(|p| models.for_location(p.key.location).is_ok())
        .cloned()
        .collect();
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (id, recs) in patient_recordings(&chosen) {
        let own: Vec<PreparedRecording> =
            chosen.iter().filter(|p| p.key.patient_id == id).cloned().collect();
        preds.push(patient_level_predict(models, &recs)?);
        truths.push(patient_truth(&own));
    }
    patient_accuracy(&preds, &truths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub metrics_files: Vec<PathBuf>,
    pub patient_file: Option<PathBuf>,
    pub patient_accuracy: Option<PatientAccuracy>,
}

/// Per-fold and holdout metrics for every model slot, and patient-level
/// accuracy over the holdout recordings when a manifest is given.
pub fn cmd_eval(
    prepared: &Path,
    models_dir: &Path,
    cfg: &RunConfig,
    manifest: Option<&Path>,
    out: &Path,
) -> Result<EvalSummary> {
    let samples = read_sample_store(&prepared.join(SAMPLES_FILE))?;
    let plan = read_plan(prepared)?;
    let mut summary = EvalSummary {
        metrics_files: Vec::new(),
        patient_file: None,
        patient_accuracy: None,
    };
    for (model, location) in model_slots(cfg.regime, &samples) {
        let mut folds = Vec::new();
        for fold in 0..plan.k() {
            let (_, va) = plan.fold(fold)?;
            let val = pick(&samples, &va, location);
            if val.is_empty() {
                continue;
            }
            let params = load_model(models_dir, &fold_name(&model, fold), cfg)?;
            let (_, _, preds) = evaluate(&params, &val)?;
            let truths: Vec<LabelSet> = val.iter().map(|s| s.labels).collect();
            folds.push(compute_metrics(&preds, &truths)?);
        }
        let hold = pick(&samples, &plan.holdout, location);
        let td = if hold.is_empty() {
            None
        } else {
            let params = load_model(models_dir, &model, cfg)?;
            let (_, _, preds) = evaluate(&params, &hold)?;
            let truths: Vec<LabelSet> = hold.iter().map(|s| s.labels).collect();
            Some(compute_metrics(&preds, &truths)?)
        };
        let path = out.join(format!("metrics_{model}.csv"));
        write(&path, metrics_csv(&folds, td.as_ref()))?;
        summary.metrics_files.push(path);
    }
    if let Some(manifest) = manifest {
        let prepared_recs = prepare_from_manifest(manifest, cfg)?;
        let held: BTreeSet<RecordingKey> = plan.holdout.iter().map(|&i| samples[i].key()).collect();
        let models = load_model_set(models_dir, cfg)?;
        let acc = patient_level_accuracy(&models, &prepared_recs, |k| held.contains(k))?;
        let path = out.join("patient_accuracy.csv");
        write(&path, patient_accuracy_csv(&[(cfg.regime.as_str().to_string(), acc.clone())]))?;
        summary.patient_file = Some(path);
        summary.patient_accuracy = Some(acc);
    }
    Ok(summary)
}

/// `Group: Class` lines in label-group order.
pub fn describe_prediction(labels: LabelSet) -> String {
    LabelGroup::ALL
        .iter()
        .map(|&g| format!("{}: {}\n", g.title(), g.class_name(labels.get(g))))
        .collect()
}

/// Predicts one patient of a manifest end to end, optionally from a
/// single location's recording.
pub fn cmd_predict(
    manifest: &Path,
    patient_id: &str,
    models_dir: &Path,
    cfg: &RunConfig,
    location: Option<Location>,
) -> Result<LabelSet> {
    let prepared = prepare_from_manifest(manifest, cfg)?;
    let models = load_model_set(models_dir, cfg)?;
    let recs: Vec<PatientRecording> = patient_recordings(&prepared)
        .remove(patient_id)
        .ok_or_else(|| Error::InvalidArgument(format!("patient {patient_id} not in manifest")))?
        .into_iter()
        .filter(|r| location.map_or(true, |l| r.location == l))
        .filter(|r| models.for_location(r.location).is_ok())
        .collect();
    patient_level_predict(&models, &recs)
}

/// Saliency CSV for one stored sample under a trained model.
pub fn cmd_saliency(
    prepared: &Path,
    sample_index: usize,
    models_dir: &Path,
    cfg: &RunConfig,
    group: LabelGroup,
    class: Option<usize>,
    out: &Path,
) -> Result<Contributions> {
    let samples = read_sample_store(&prepared.join(SAMPLES_FILE))?;
    let sample = samples.get(sample_index).ok_or_else(|| {
        Error::InvalidArgument(format!("sample {sample_index} of {}", samples.len()))
    })?;
    let models = load_model_set(models_dir, cfg)?;
    let params = models.for_location(sample.location)?;
    let map = input_saliency(params, sample, group, class)?;
    let contributions = segment_contributions(&map);
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    export_saliency(&map, &contributions, out)?;
    Ok(contributions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::tiny();
        cfg.folds = 2;
        cfg.train.max_epochs = 1;
        cfg.regime = Regime::PositionIndependent;
        cfg
    }

    #[test]
    fn synth_writes_parseable_files_deterministically() {
        let spec = SynthSpec {
            patients: 3,
            min_cycles: 3,
            max_cycles: 4,
            ..SynthSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = cmd_synth(&spec, 5, a.path()).unwrap();
        cmd_synth(&spec, 5, b.path()).unwrap();
        assert_eq!(sa.patients, 3);
        let manifest = Manifest::read(&sa.manifest).unwrap();
        assert_eq!(manifest.patients.len(), 3);
        for r in &manifest.recordings {
            let x = fs::read(a.path().join(&r.audio)).unwrap();
            let y = fs::read(b.path().join(&r.audio)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(load_manifest(&sa.manifest).unwrap().len(), 12);
    }

    #[test]
    fn empty_manifest_reports_no_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        Manifest::default().write(&path).unwrap();
        let err = cmd_prepare(&path, &tiny_cfg(), &dir.path().join("p")).unwrap_err();
        assert!(err.to_string().contains("no recordings"), "{err}");
    }

    #[test]
    fn prediction_text_uses_class_names() {
        let text = describe_prediction(LabelSet::NORMAL);
        assert!(text.starts_with("Timing: Normal\n"));
        assert_eq!(text.lines().count(), 5);
        let text = describe_prediction(LabelSet::new([4, 1, 3, 2, 1]).unwrap());
        assert!(text.contains("Holosystolic") && text.contains("Harsh"), "{text}");
    }
}
