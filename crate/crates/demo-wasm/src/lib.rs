//! Browser demo: synthesize a patient, train a small model on synthetic
//! patients in short bursts, and inspect one sample's prediction and
//! saliency.

use cardiolabel::net::{ensemble_forward, loss_and_gradients, EnsembleParams, NetConfig};
use cardiolabel::pcg_data::{
    build_dataset_samples, generate_synthetic_dataset, prepare_recordings, LabelGroup, Sample,
    Standardization, SynthSpec, SyntheticDataset,
};
use cardiolabel::saliency::{input_saliency, segment_contributions};
use cardiolabel::train::{compute_metrics, AdamState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: cardiolabel::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn samples_of(data: &SyntheticDataset, cfg: &NetConfig, seed: u64) -> cardiolabel::Result<Vec<Sample>> {
    let prepared = prepare_recordings(&data.loaded(), cfg.segment_length, Standardization::UnitVariance)?;
    build_dataset_samples(&prepared, cfg.segments, seed)
}

#[wasm_bindgen]
pub struct Demo {
    cfg: NetConfig,
    params: EnsembleParams,
    adam: AdamState,
    train_set: Vec<Sample>,
    rng: ChaCha8Rng,
    epochs: usize,
    patient: Option<SyntheticDataset>,
    samples: Vec<Sample>,
}

#[wasm_bindgen]
impl Demo {
    /// Freshly initialized tiny model plus a training pool of `patients`
    /// synthetic patients.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, patients: usize) -> Result<Demo, JsError> {
        let cfg = NetConfig::tiny();
        let params = EnsembleParams::init(&cfg, seed).map_err(js_err)?;
        let spec = SynthSpec {
            patients: patients.max(2),
            min_cycles: 6,
            max_cycles: 8,
            ..SynthSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, seed).map_err(js_err)?;
        let train_set = samples_of(&data, &cfg, seed).map_err(js_err)?;
        Ok(Demo {
            adam: AdamState::new(&params.store, 1e-3),
            cfg,
            params,
            train_set,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            epochs: 0,
            patient: None,
            samples: Vec::new(),
        })
    }

    #[wasm_bindgen(getter)]
    pub fn training_samples(&self) -> usize {
        self.train_set.len()
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// One pass over the training pool in batches of 32. Returns
    /// `[mean loss, training macro F1]`.
    pub fn train_epoch(&mut self) -> Result<Vec<f64>, JsError> {
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(order.len());
        let mut truths = Vec::with_capacity(order.len());
        for batch in order.chunks(32) {
            self.params.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &self.train_set[i];
                let (loss, grads, out) = loss_and_gradients(&self.params, s).map_err(js_err)?;
                loss_sum += loss;
                preds.push(out.predict());
                truths.push(s.labels);
                self.params.store.accumulate(&grads, scale).map_err(js_err)?;
            }
            self.adam.apply(&mut self.params.store).map_err(js_err)?;
        }
        self.epochs += 1;
        let f1 = compute_metrics(&preds, &truths).map_err(js_err)?.macro_avg.f1;
        Ok(vec![loss_sum / order.len() as f64, f1])
    }

    /// Generates one new patient and keeps its samples. Returns the
    /// waveform of the first recording that carries a murmur (or the first
    /// recording).
    pub fn synthesize(&mut self, seed: u64, murmur: bool) -> Result<Vec<f32>, JsError> {
        let spec = SynthSpec {
            patients: 1,
            murmur_prevalence: if murmur { 1.0 } else { 0.0 },
            min_cycles: 6,
            max_cycles: 8,
            first_patient_id: 90000,
            ..SynthSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, seed).map_err(js_err)?;
        self.samples = samples_of(&data, &self.cfg, seed).map_err(js_err)?;
        let labels = &data.patients[0];
        let rec = data
            .recordings
            .iter()
            .find(|r| labels.recording_labels(r.location).has_murmur())
            .unwrap_or(&data.recordings[0]);
        let wave = rec.samples.iter().map(|&v| v as f32).collect();
        self.patient = Some(data);
        Ok(wave)
    }

    /// Ground-truth labels of the synthesized patient, one `Group: Class`
    /// per line.
    pub fn truth(&self) -> String {
        self.patient
            .as_ref()
            .map(|d| describe(d.patients[0].label_set))
            .unwrap_or_default()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// The sample's segment matrix, row-major `segments × length`.
    pub fn sample_segments(&self, index: usize) -> Result<Vec<f64>, JsError> {
        Ok(self.sample(index)?.segments.clone())
    }

    #[wasm_bindgen(getter)]
    pub fn segments(&self) -> usize {
        self.cfg.segments
    }

    #[wasm_bindgen(getter)]
    pub fn segment_length(&self) -> usize {
        self.cfg.segment_length
    }

    /// Predicted labels with the winning probability per group.
    pub fn predict(&self, index: usize) -> Result<String, JsError> {
        let out = ensemble_forward(&self.params, self.sample(index)?).map_err(js_err)?;
        let labels = out.predict();
        Ok(LabelGroup::ALL
            .iter()
            .map(|&g| {
                let c = labels.get(g);
                format!("{}: {} ({:.2})\n", g.title(), g.class_name(c), out.group_probs[g.index()][c])
            })
            .collect())
    }

    /// Saliency of the predicted class of `group`: the first `segments`
    /// values are contribution percentages, the rest the map itself.
    pub fn saliency(&self, index: usize, group: &str) -> Result<Vec<f64>, JsError> {
        let group = LabelGroup::from_name(group).map_err(js_err)?;
        let map = input_saliency(&self.params, self.sample(index)?, group, None).map_err(js_err)?;
        let mut out = segment_contributions(&map).percent;
        out.extend_from_slice(&map.values);
        Ok(out)
    }
}

impl Demo {
    fn sample(&self, index: usize) -> Result<&Sample, JsError> {
        self.samples
            .get(index)
            .ok_or_else(|| JsError::new(&format!("sample {index} of {}", self.samples.len())))
    }
}

fn describe(labels: cardiolabel::pcg_data::LabelSet) -> String {
    LabelGroup::ALL
        .iter()
        .map(|&g| format!("{}: {}\n", g.title(), g.class_name(labels.get(g))))
        .collect()
}
