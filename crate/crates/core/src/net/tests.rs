use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, ParamId, Tape};
use crate::pcg_data::{decode_labels, LabelGroup, LabelSet, Location, Sample};

fn random_sample(config: &NetConfig, labels: LabelSet, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, len) = (config.segments, config.segment_length);
    Sample {
        segments: (0..n * len).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        n,
        len,
        labels,
        patient_id: "1".into(),
        location: Location::AV,
        pad_count: 0,
        source_indices: (0..n).collect(),
    }
}

fn small_config(segments: usize, depths: Vec<usize>, head_grid: usize) -> NetConfig {
    NetConfig {
        segments,
        segment_length: 64,
        encoder: EncoderConfig {
            stem_channels: 3,
            block_depths: depths,
            growth_rate: 2,
        },
        head_grid,
        ..NetConfig::tiny()
    }
}

fn murmur_labels() -> LabelSet {
    LabelSet::new([2, 1, 3, 4, 2]).unwrap()
}

// Straight-line reference implementation, deliberately written without the
// tape or any shared helper.

fn ref_conv(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    k: &[f64],
    ks: usize,
    f: usize,
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; h * w * f];
    for oy in 0..h {
        for ox in 0..w {
            for o in 0..f {
                let mut acc = bias[o];
                for dy in 0..ks {
                    for dx in 0..ks {
                        let iy = oy as isize + dy as isize - pad as isize;
                        let ix = ox as isize + dx as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            let xv = x[(iy as usize * w + ix as usize) * c + ci];
                            acc += xv * k[((dy * ks + dx) * c + ci) * f + o];
                        }
                    }
                }
                out[(oy * w + ox) * f + o] = acc;
            }
        }
    }
    out
}

fn ref_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn ref_pool(x: &[f64], (h, w, c): (usize, usize, usize), p: usize) -> Vec<f64> {
    let (oh, ow) = (h / p, w / p);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..h {
        for xx in 0..w {
            for ci in 0..c {
                out[((y / p) * ow + xx / p) * c + ci] += x[(y * w + xx) * c + ci] / (p * p) as f64;
            }
        }
    }
    out
}

fn ref_concat_channels(a: &[f64], ca: usize, b: &[f64], cb: usize, hw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(hw * (ca + cb));
    for i in 0..hw {
        out.extend_from_slice(&a[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&b[i * cb..(i + 1) * cb]);
    }
    out
}

fn ref_affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>())
        .collect()
}

fn reference_forward(params: &EnsembleParams, sample: &Sample) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = &params.config;
    let v = |id: ParamId| params.store.value(id).data().to_vec();
    let s = cfg.side();
    let mut logits = Vec::new();
    let mut globals = Vec::new();
    for block in &params.blocks {
        let mut encoded = Vec::new();
        let mut dims = (0, 0, 0);
        for seg in 0..cfg.segments {
            let img = sample.row(seg).to_vec();
            let mut c = cfg.encoder.stem_channels;
            let mut hw = (s, s);
            let mut x = ref_conv(
                &img,
                (s, s, 1),
                &v(block.encoder.stem_kernel),
                3,
                c,
                &v(block.encoder.stem_bias),
                1,
            );
            for (bi, layers) in block.encoder.blocks.iter().enumerate() {
                if bi > 0 {
                    x = ref_pool(&x, (hw.0, hw.1, c), 2);
                    hw = (hw.0 / 2, hw.1 / 2);
                }
                for layer in layers {
                    let g = cfg.encoder.growth_rate;
                    let y = ref_conv(
                        &ref_relu(&x),
                        (hw.0, hw.1, c),
                        &v(layer.kernel),
                        3,
                        g,
                        &v(layer.bias),
                        1,
                    );
                    x = ref_concat_channels(&x, c, &y, g, hw.0 * hw.1);
                    c += g;
                }
            }
            encoded.push(ref_relu(&x));
            dims = (hw.0, hw.1, c);
        }
        let (h, w, f) = dims;
        let mut stacked = encoded[0].clone();
        let mut sc = f;
        for e in &encoded[1..] {
            stacked = ref_concat_channels(&stacked, sc, e, f, h * w);
            sc += f;
        }
        let merged = ref_relu(&ref_conv(
            &stacked,
            (h, w, sc),
            &v(block.merge_kernel),
            1,
            f,
            &v(block.merge_bias),
            0,
        ));
        let pooled = ref_pool(&merged, (h, w, f), h / cfg.head_grid);
        logits.push(ref_affine(&pooled, &v(block.head_weight), &v(block.head_bias)));
        globals.extend(merged);
    }
    let global = ref_affine(&globals, &v(params.global_weight), &v(params.global_bias));
    (logits, global)
}

#[test]
fn forward_matches_straight_line_reference() {
    for (depths, grid) in [(vec![1], 4), (vec![1], 2), (vec![2, 1], 2)] {
        let cfg = small_config(2, depths, grid);
        let params = EnsembleParams::init_random(&cfg, 3).unwrap();
        let sample = random_sample(&cfg, murmur_labels(), 4);
        let out = ensemble_forward(&params, &sample).unwrap();
        let (logits, global) = reference_forward(&params, &sample);
        for (a, b) in out.group_logits.iter().flatten().zip(logits.iter().flatten()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert_eq!(out.global_logits.len(), global.len());
        for (a, b) in out.global_logits.iter().zip(&global) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn reshape_is_row_major_and_invertible() {
    let cfg = NetConfig {
        segments: 1,
        segment_length: 4,
        encoder: EncoderConfig {
            block_depths: vec![1],
            ..EncoderConfig::default()
        },
        head_grid: 1,
        ..NetConfig::default()
    };
    let mut sample = random_sample(&cfg, LabelSet::NORMAL, 0);
    sample.segments = vec![1.0, 2.0, 3.0, 4.0];
    let imgs = reshape_sample(&sample, &cfg).unwrap();
    assert_eq!(imgs[0].shape(), &[2, 2, 1]);
    assert_eq!(imgs[0].data(), &[1.0, 2.0, 3.0, 4.0]);

    let cfg = NetConfig::default();
    let sample = random_sample(&cfg, LabelSet::NORMAL, 9);
    let imgs = reshape_sample(&sample, &cfg).unwrap();
    assert_eq!(imgs.len(), 10);
    assert_eq!(imgs[0].shape(), &[32, 32, 1]);
    assert_eq!(unreshape(&imgs), sample.segments);

    let mut bad = sample.clone();
    bad.len = 1000;
    bad.segments.truncate(10 * 1000);
    assert!(reshape_sample(&bad, &cfg).is_err());
}

#[test]
fn output_arity_and_normalization() {
    let cfg = NetConfig::tiny();
    let params = EnsembleParams::init_random(&cfg, 1).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 2);
    let out = ensemble_forward(&params, &sample).unwrap();
    let widths: Vec<usize> = out.group_probs.iter().map(Vec::len).collect();
    assert_eq!(widths, vec![5, 4, 4, 5, 4]);
    assert_eq!(out.global_scores.len(), 22);
    for p in &out.group_probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(out.global_scores.iter().all(|&s| s > 0.0 && s < 1.0));
    let again = ensemble_forward(&params, &sample).unwrap();
    assert_eq!(out, again);
}

#[test]
fn identical_segments_share_encoder_output() {
    let cfg = small_config(2, vec![1], 4);
    let params = EnsembleParams::init_random(&cfg, 5).unwrap();
    let mut sample = random_sample(&cfg, murmur_labels(), 6);
    let first = sample.row(0).to_vec();
    sample.segments[64..].copy_from_slice(&first);
    let mut tape = Tape::new(&params.store);
    let vars = ensemble_forward_on_tape(&mut tape, &params, &sample).unwrap();
    for b in &vars.blocks {
        let a = tape.value(b.segment_features[0]);
        let c = tape.value(b.segment_features[1]);
        assert_eq!(a, c);
    }
}

#[test]
fn zeroed_merge_slot_ignores_that_segment() {
    let cfg = small_config(3, vec![1], 2);
    let mut params = EnsembleParams::init_random(&cfg, 7).unwrap();
    let (_, _, f) = cfg.encoder_output();
    let slot = 1;
    for b in params.blocks.clone() {
        let k = params.store.value_mut(b.merge_kernel);
        for ci in slot * f..(slot + 1) * f {
            for o in 0..f {
                k.data_mut()[ci * f + o] = 0.0;
            }
        }
    }
    let sample = random_sample(&cfg, murmur_labels(), 8);
    let mut changed = sample.clone();
    for v in &mut changed.segments[slot * 64..(slot + 1) * 64] {
        *v = *v * -3.0 + 10.0;
    }
    let a = ensemble_forward(&params, &sample).unwrap();
    let b = ensemble_forward(&params, &changed).unwrap();
    assert_eq!(a.group_logits, b.group_logits);
}

#[test]
fn encoder_gradient_is_sum_of_segment_contributions() {
    let cfg = small_config(3, vec![1, 1], 2);
    let mut params = EnsembleParams::init_random(&cfg, 11).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 12);
    let block = params.block(LabelGroup::Pitch).clone();

    // Per-segment copies of the encoder, each with its own ids.
    let copy_encoder = |params: &mut EnsembleParams| {
        let e = &block.encoder;
        let mut dup = |id: ParamId| {
            let t = params.store.get(id).clone();
            params.store.add(format!("{}.copy", t.name), t.value)
        };
        EncoderParams {
            stem_kernel: dup(e.stem_kernel),
            stem_bias: dup(e.stem_bias),
            blocks: e
                .blocks
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|l| DenseLayerParams {
                            kernel: dup(l.kernel),
                            bias: dup(l.bias),
                        })
                        .collect()
                })
                .collect(),
        }
    };
    let copies: Vec<EncoderParams> = (0..cfg.segments).map(|_| copy_encoder(&mut params)).collect();

    let run = |encoders: &dyn Fn(usize) -> EncoderParams| {
        let mut tape = Tape::new(&params.store);
        let images: Vec<_> = reshape_sample(&sample, &cfg)
            .unwrap()
            .into_iter()
            .map(|t| tape.input(t))
            .collect();
        let owned: Vec<EncoderParams> = (0..cfg.segments).map(encoders).collect();
        let vars =
            super::model::block_forward_with(&mut tape, |i| &owned[i], &block, &cfg, &images)
                .unwrap();
        let loss = tape.softmax_cross_entropy(vars.logits, 1).unwrap();
        (tape.backward(loss).unwrap(), owned)
    };
    let (shared, _) = run(&|_| block.encoder.clone());
    let (split, owned) = run(&|i| copies[i].clone());
    let g = shared.param(block.encoder.stem_kernel).unwrap();
    let mut sum = vec![0.0; g.len()];
    for e in &owned {
        for (s, v) in sum.iter_mut().zip(split.param(e.stem_kernel).unwrap().data()) {
            *s += v;
        }
    }
    for (a, b) in g.data().iter().zip(&sum) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn group_loss_gradients(
    params: &EnsembleParams,
    sample: &Sample,
    group: LabelGroup,
    lambda: f64,
) -> crate::autodiff::Gradients {
    let mut tape = Tape::new(&params.store);
    let vars = ensemble_forward_on_tape(&mut tape, params, sample).unwrap();
    let mut loss = tape
        .softmax_cross_entropy(vars.group_logits(group), sample.labels.get(group))
        .unwrap();
    if lambda > 0.0 {
        let target = crate::pcg_data::encode_labels(sample.labels).unwrap();
        let bce = tape.sigmoid_bce(vars.global_logits, &target).unwrap();
        let w = tape.scale(bce, lambda);
        loss = tape.add(loss, w).unwrap();
    }
    tape.backward(loss).unwrap()
}

#[test]
fn blocks_are_isolated_without_global_term() {
    let cfg = small_config(2, vec![1], 2);
    let params = EnsembleParams::init_random(&cfg, 13).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 14);
    for g in LabelGroup::ALL {
        let grads = group_loss_gradients(&params, &sample, g, 0.0);
        for other in LabelGroup::ALL.into_iter().filter(|&h| h != g) {
            for id in params.block(other).param_ids() {
                if let Some(t) = grads.param(id) {
                    assert!(t.data().iter().all(|&v| v == 0.0));
                }
            }
        }
        let own: f64 = params
            .block(g)
            .param_ids()
            .iter()
            .filter_map(|&id| grads.param(id))
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .sum();
        assert!(own > 0.0);
    }
    // With the global term switched on every block receives gradient.
    let grads = group_loss_gradients(&params, &sample, LabelGroup::Timing, 1.0);
    let head = grads.param(params.block(LabelGroup::Grading).merge_kernel).unwrap();
    assert!(head.data().iter().any(|&v| v != 0.0));
}

#[test]
fn whole_network_gradient_check() {
    let cfg = NetConfig {
        segments: 2,
        ..NetConfig::tiny()
    };
    let params = EnsembleParams::init_random(&cfg, 21).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 22);
    let (_, grads, _) = loss_and_gradients(&params, &sample).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for id in params.store.ids() {
        let x = params.store.value(id).data().to_vec();
        let analytic = grads
            .param(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let coords: Vec<usize> = (0..6).map(|_| rng.gen_range(0..x.len())).collect();
        let report = grad_check(
            |p| {
                let mut probe = params.clone();
                probe.store.value_mut(id).data_mut().copy_from_slice(p);
                let out = ensemble_forward(&probe, &sample).unwrap();
                joint_loss(&out, sample.labels, cfg.global_weight).unwrap()
            },
            &x,
            &analytic,
            1e-5,
            1e-3,
            Some(&coords),
        );
        assert!(
            report.passed(),
            "{}: {report:?}",
            params.store.get(id).name
        );
    }
}

#[test]
fn tape_loss_matches_numeric_loss() {
    let cfg = small_config(2, vec![1], 2);
    let params = EnsembleParams::init_random(&cfg, 31).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 32);
    let (tape_loss, _, out) = loss_and_gradients(&params, &sample).unwrap();
    let numeric = joint_loss(&out, sample.labels, cfg.global_weight).unwrap();
    assert!((tape_loss - numeric).abs() < 1e-12);
    assert!(tape_loss > 0.0);
}

fn constant_output(group_logits: Vec<Vec<f64>>, global_logits: Vec<f64>) -> EnsembleOutput {
    EnsembleOutput {
        group_probs: group_logits.clone(),
        group_logits,
        global_scores: global_logits.clone(),
        global_logits,
    }
}

#[test]
fn uniform_outputs_give_closed_form_loss() {
    let zeros = LabelGroup::ALL.iter().map(|g| vec![0.0; g.width()]).collect();
    let out = constant_output(zeros, vec![0.0; 22]);
    let base = 2.0 * 5f64.ln() + 3.0 * 4f64.ln();
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let l = joint_loss(&out, murmur_labels(), lambda).unwrap();
        assert!((l - (base + lambda * 2f64.ln())).abs() < 1e-12);
    }
    assert!((base - 7.3778).abs() < 1e-4);
    assert!(joint_loss(&out, murmur_labels(), -1.0).is_err());
}

#[test]
fn confident_correct_outputs_have_tiny_loss() {
    let labels = murmur_labels();
    let target = crate::pcg_data::encode_labels(labels).unwrap();
    let logits = LabelGroup::ALL
        .iter()
        .map(|&g| {
            (0..g.width())
                .map(|c| if c == labels.get(g) { 20.0 } else { -20.0 })
                .collect()
        })
        .collect();
    let global = target.iter().map(|&t| if t == 1.0 { 20.0 } else { -20.0 }).collect();
    let out = constant_output(logits, global);
    assert!(joint_loss(&out, labels, 1.0).unwrap() < 1e-3);
}

#[test]
fn prediction_uses_group_heads_only() {
    let cfg = small_config(2, vec![1], 2);
    let mut params = EnsembleParams::init_random(&cfg, 41).unwrap();
    let sample = random_sample(&cfg, murmur_labels(), 42);
    let before = predict_sample(&params, &sample).unwrap();
    for v in params.store.value_mut(params.global_weight).data_mut() {
        *v = *v * 50.0 - 3.0;
    }
    assert_eq!(before, predict_sample(&params, &sample).unwrap());

    // Force class 0 everywhere through the head biases.
    for b in params.blocks.clone() {
        for v in params.store.value_mut(b.head_weight).data_mut() {
            *v = 0.0;
        }
        params.store.value_mut(b.head_bias).data_mut()[0] = 5.0;
    }
    assert_eq!(predict_sample(&params, &sample).unwrap(), LabelSet::NORMAL);
}

#[test]
fn prediction_matches_decode_of_probabilities() {
    let cfg = small_config(1, vec![1], 2);
    for seed in 0..8 {
        let params = EnsembleParams::init_random(&cfg, seed).unwrap();
        let sample = random_sample(&cfg, murmur_labels(), seed + 100);
        let out = ensemble_forward(&params, &sample).unwrap();
        let flat: Vec<f64> = out.group_probs.concat();
        let decoded = decode_labels(&flat).unwrap();
        assert_eq!(out.predict(), decoded);
        // Monotone rescaling of one group's logits keeps the argmax.
        let mut scaled = out.clone();
        scaled.group_probs[2] = scaled.group_probs[2].iter().map(|p| p.powi(3) * 7.0).collect();
        assert_eq!(scaled.predict(), out.predict());
    }
}

#[test]
fn init_is_deterministic_and_named() {
    let cfg = NetConfig::tiny();
    let a = EnsembleParams::init_random(&cfg, 5).unwrap();
    let b = EnsembleParams::init_random(&cfg, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.store.find("grading.encoder.stem.kernel").is_some());
    assert!(a.store.find("global.weight").is_some());
    let c = EnsembleParams::init_random(&cfg, 6).unwrap();
    assert_ne!(a.store, c.store);
}

#[test]
fn training_init_starts_uniform() {
    let cfg = NetConfig {
        segments: 2,
        ..NetConfig::tiny()
    };
    let params = EnsembleParams::init(&cfg, 5).unwrap();
    assert_eq!(params, EnsembleParams::init(&cfg, 5).unwrap());
    let sample = random_sample(&cfg, murmur_labels(), 6);
    let out = ensemble_forward(&params, &sample).unwrap();
    let base = 2.0 * 5f64.ln() + 3.0 * 4f64.ln();
    let loss = joint_loss(&out, sample.labels, 1.0).unwrap();
    assert!((loss - base - 2f64.ln()).abs() < 1e-12);
    // The heads still learn from the first step.
    let (_, grads, _) = loss_and_gradients(&params, &sample).unwrap();
    let head = grads.param(params.block(LabelGroup::Shape).head_weight).unwrap();
    assert!(head.data().iter().any(|&v| v != 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn arity_holds_across_configs(n in prop::sample::select(vec![1usize, 2, 10]),
                                  s in prop::sample::select(vec![4usize, 8, 32]),
                                  seed in 0u64..1000) {
        let cfg = NetConfig {
            segments: n,
            segment_length: s * s,
            encoder: EncoderConfig { stem_channels: 2, block_depths: vec![1, 1], growth_rate: 2 },
            head_grid: 2,
            ..NetConfig::default()
        };
        let params = EnsembleParams::init_random(&cfg, seed).unwrap();
        let sample = random_sample(&cfg, LabelSet::NORMAL, seed);
        let out = ensemble_forward(&params, &sample).unwrap();
        let widths: Vec<usize> = out.group_probs.iter().map(Vec::len).collect();
        prop_assert_eq!(widths, vec![5, 4, 4, 5, 4]);
        prop_assert_eq!(out.global_scores.len(), 22);
        for p in &out.group_probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
