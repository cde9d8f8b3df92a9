use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NetConfig;
use crate::autodiff::{
    dense_block, softmax_parts, sigmoid, transition_pool, DenseLayerVars, Gradients, ParamId,
    ParamStore, Tape, Tensor, Var,
};
use crate::pcg_data::{argmax, encode_labels, LabelGroup, LabelSet, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayerParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// One encoder instance: stem convolution plus dense blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub stem_kernel: ParamId,
    pub stem_bias: ParamId,
    pub blocks: Vec<Vec<DenseLayerParams>>,
}

/// One label-group block: its own encoder (shared by all segments of a
/// sample), the 1×1 merge across stacked segments, and the group head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupBlockParams {
    pub group: LabelGroup,
    pub encoder: EncoderParams,
    pub merge_kernel: ParamId,
    pub merge_bias: ParamId,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

impl GroupBlockParams {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.encoder.stem_kernel, self.encoder.stem_bias];
        for layer in self.encoder.blocks.iter().flatten() {
            ids.extend([layer.kernel, layer.bias]);
        }
        ids.extend([
            self.merge_kernel,
            self.merge_bias,
            self.head_weight,
            self.head_bias,
        ]);
        ids
    }
}

/// All trainable state of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParams {
    pub config: NetConfig,
    pub store: ParamStore,
    pub blocks: Vec<GroupBlockParams>,
    pub global_weight: ParamId,
    pub global_bias: ParamId,
}

impl EnsembleParams {
    /// Training initialization: He-normal convolutions, zero biases and
    /// zero output layers, so every group starts at the uniform prediction.
    /// Deterministic in `seed`.
    pub fn init(config: &NetConfig, seed: u64) -> Result<EnsembleParams> {
        Self::build(config, seed, false)
    }

    /// Like [`EnsembleParams::init`] but with He-normal output layers too: a
    /// generic point for probing gradients and saliency.
    pub fn init_random(config: &NetConfig, seed: u64) -> Result<EnsembleParams> {
        Self::build(config, seed, true)
    }

    fn build(config: &NetConfig, seed: u64, random_heads: bool) -> Result<EnsembleParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let (_, _, features) = config.encoder_output();
        let n = config.segments;
        let grid = config.head_grid;

        let mut blocks = Vec::with_capacity(5);
        for group in LabelGroup::ALL {
            let name = group.name();
            let stem_kernel = store.add_he(
                format!("{name}.encoder.stem.kernel"),
                &[3, 3, 1, enc.stem_channels],
                9,
                &mut rng,
            );
            let stem_bias = store.add(
                format!("{name}.encoder.stem.bias"),
                Tensor::zeros(&[enc.stem_channels]),
            );
            let mut channels = enc.stem_channels;
            let mut dense = Vec::new();
            for (b, &depth) in enc.block_depths.iter().enumerate() {
                let mut layers = Vec::with_capacity(depth);
                for l in 0..depth {
                    let kernel = store.add_he(
                        format!("{name}.encoder.block{b}.layer{l}.kernel"),
                        &[3, 3, channels, enc.growth_rate],
                        9 * channels,
                        &mut rng,
                    );
                    let bias = store.add(
                        format!("{name}.encoder.block{b}.layer{l}.bias"),
                        Tensor::zeros(&[enc.growth_rate]),
                    );
                    layers.push(DenseLayerParams { kernel, bias });
                    channels += enc.growth_rate;
                }
                dense.push(layers);
            }
            let merge_kernel = store.add_he(
                format!("{name}.merge.kernel"),
                &[1, 1, n * features, features],
                n * features,
                &mut rng,
            );
            let merge_bias = store.add(format!("{name}.merge.bias"), Tensor::zeros(&[features]));
            let head_in = grid * grid * features;
            let head_shape = [group.width(), head_in];
            let head_weight = if random_heads {
                store.add_he(format!("{name}.head.weight"), &head_shape, head_in, &mut rng)
            } else {
                store.add(format!("{name}.head.weight"), Tensor::zeros(&head_shape))
            };
            let head_bias = store.add(format!("{name}.head.bias"), Tensor::zeros(&[group.width()]));
            blocks.push(GroupBlockParams {
                group,
                encoder: EncoderParams {
                    stem_kernel,
                    stem_bias,
                    blocks: dense,
                },
                merge_kernel,
                merge_bias,
                head_weight,
                head_bias,
            });
        }
        let global_in = 5 * config.global_feature_len();
        let global_shape = [crate::pcg_data::ENCODED_WIDTH, global_in];
        let global_weight = if random_heads {
            store.add_he("global.weight", &global_shape, global_in, &mut rng)
        } else {
            store.add("global.weight", Tensor::zeros(&global_shape))
        };
        let global_bias = store.add(
            "global.bias",
            Tensor::zeros(&[crate::pcg_data::ENCODED_WIDTH]),
        );
        Ok(EnsembleParams {
            config: config.clone(),
            store,
            blocks,
            global_weight,
            global_bias,
        })
    }

    pub fn block(&self, group: LabelGroup) -> &GroupBlockParams {
        &self.blocks[group.index()]
    }
}

/// Splits an `N × L` sample into `N` row-major `s × s × 1` images.
pub fn reshape_sample(sample: &Sample, config: &NetConfig) -> Result<Vec<Tensor>> {
    let s = config.side();
    if s * s != sample.len {
        return Err(Error::Shape(format!(
            "segment length {} is not {s}×{s}",
            sample.len
        )));
    }
    if sample.n != config.segments {
        return Err(Error::Shape(format!(
            "sample has {} segments, network expects {}",
            sample.n, config.segments
        )));
    }
    (0..sample.n)
        .map(|i| Tensor::new(vec![s, s, 1], sample.row(i).to_vec()))
        .collect()
}

/// Inverse of [`reshape_sample`]: flattens images back into an `N × L`
/// row-major matrix.
pub fn unreshape(images: &[Tensor]) -> Vec<f64> {
    images.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn encoder_forward(tape: &mut Tape<'_>, enc: &EncoderParams, image: Var) -> Result<Var> {
    let k = tape.param(enc.stem_kernel);
    let b = tape.param(enc.stem_bias);
    let mut x = tape.conv2d(image, k, Some(b), 1, 1)?;
    for (i, block) in enc.blocks.iter().enumerate() {
        if i > 0 {
            x = transition_pool(tape, x)?;
        }
        let layers: Vec<DenseLayerVars> = block
            .iter()
            .map(|l| DenseLayerVars {
                kernel: tape.param(l.kernel),
                bias: tape.param(l.bias),
            })
            .collect();
        x = dense_block(tape, x, &layers)?;
    }
    Ok(tape.relu(x))
}

/// Vars produced by one group block.
#[derive(Debug, Clone)]
pub struct BlockVars {
    /// Encoder output per segment.
    pub segment_features: Vec<Var>,
    /// Stacked per-segment maps, `h × w × (N·F)`.
    pub stacked: Var,
    /// 1×1 merge of the stack, `h × w × F`.
    pub merged: Var,
    pub logits: Var,
    /// Flattened merged map, fed to the global head.
    pub global_features: Var,
}

pub(crate) fn block_forward_with<'e>(
    tape: &mut Tape<'_>,
    encoder_for: impl Fn(usize) -> &'e EncoderParams,
    block: &GroupBlockParams,
    config: &NetConfig,
    images: &[Var],
) -> Result<BlockVars> {
    if images.len() != config.segments {
        return Err(Error::Shape(format!(
            "{} segment images, network expects {}",
            images.len(),
            config.segments
        )));
    }
    let segment_features = images
        .iter()
        .enumerate()
        .map(|(i, &img)| encoder_forward(tape, encoder_for(i), img))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&segment_features, 2)?;
    let mk = tape.param(block.merge_kernel);
    let mb = tape.param(block.merge_bias);
    let merged_linear = tape.conv2d(stacked, mk, Some(mb), 1, 0)?;
    let merged = tape.relu(merged_linear);

    let (h, w, f) = config.encoder_output();
    let pool = h / config.head_grid;
    let pooled = if pool > 1 {
        tape.avg_pool(merged, pool)?
    } else {
        merged
    };
    let grid = config.head_grid;
    let flat = tape.reshape(pooled, vec![grid * grid * f])?;
    let hw = tape.param(block.head_weight);
    let hb = tape.param(block.head_bias);
    let logits = tape.linear(flat, hw, Some(hb))?;
    let global_features = tape.reshape(merged, vec![h * w * f])?;
    Ok(BlockVars {
        segment_features,
        stacked,
        merged,
        logits,
        global_features,
    })
}

/// Runs one group block on already-recorded segment images.
pub fn group_block_forward(
    tape: &mut Tape<'_>,
    block: &GroupBlockParams,
    config: &NetConfig,
    images: &[Var],
) -> Result<BlockVars> {
    block_forward_with(tape, |_| &block.encoder, block, config, images)
}

/// Vars of a full ensemble pass.
#[derive(Debug, Clone)]
pub struct EnsembleVars {
    pub images: Vec<Var>,
    pub blocks: Vec<BlockVars>,
    pub global_logits: Var,
}

impl EnsembleVars {
    pub fn group_logits(&self, group: LabelGroup) -> Var {
        self.blocks[group.index()].logits
    }
}

/// Records the whole ensemble on `tape` for one sample.
pub fn ensemble_forward_on_tape(
    tape: &mut Tape<'_>,
    params: &EnsembleParams,
    sample: &Sample,
) -> Result<EnsembleVars> {
    let images: Vec<Var> = reshape_sample(sample, &params.config)?
        .into_iter()
        .map(|t| tape.input(t))
        .collect();
    let blocks = params
        .blocks
        .iter()
        .map(|b| group_block_forward(tape, b, &params.config, &images))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<Var> = blocks.iter().map(|b| b.global_features).collect();
    let joined = tape.concat(&feats, 0)?;
    let gw = tape.param(params.global_weight);
    let gb = tape.param(params.global_bias);
    let global_logits = tape.linear(joined, gw, Some(gb))?;
    Ok(EnsembleVars {
        images,
        blocks,
        global_logits,
    })
}

/// Five group distributions plus the 22-dim global sigmoid scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub group_logits: Vec<Vec<f64>>,
    pub group_probs: Vec<Vec<f64>>,
    pub global_logits: Vec<f64>,
    pub global_scores: Vec<f64>,
}

impl EnsembleOutput {
    fn from_tape(tape: &Tape<'_>, vars: &EnsembleVars) -> EnsembleOutput {
        let group_logits: Vec<Vec<f64>> = vars
            .blocks
            .iter()
            .map(|b| tape.value(b.logits).data().to_vec())
            .collect();
        let group_probs = group_logits.iter().map(|z| softmax_parts(z).0).collect();
        let global_logits = tape.value(vars.global_logits).data().to_vec();
        let global_scores = global_logits.iter().map(|&z| sigmoid(z)).collect();
        EnsembleOutput {
            group_logits,
            group_probs,
            global_logits,
            global_scores,
        }
    }

    /// Group head argmax, ties to the lowest index. The global head is not
    /// consulted.
    pub fn predict(&self) -> LabelSet {
        let mut values = [0usize; 5];
        for (v, probs) in values.iter_mut().zip(&self.group_probs) {
            *v = argmax(probs);
        }
        // Heads are independent, so the result may mix normal and murmur
        // classes across groups.
        LabelSet {
            timing: values[0] as u8,
            pitch: values[1] as u8,
            quality: values[2] as u8,
            shape: values[3] as u8,
            grading: values[4] as u8,
        }
    }
}

pub fn ensemble_forward(params: &EnsembleParams, sample: &Sample) -> Result<EnsembleOutput> {
    let mut tape = Tape::new(&params.store);
    let vars = ensemble_forward_on_tape(&mut tape, params, sample)?;
    Ok(EnsembleOutput::from_tape(&tape, &vars))
}

/// Sum of the five group cross-entropies plus `lambda` times the mean binary
/// cross-entropy of the global head against the 22-dim encoding. Evaluated
/// from logits in the numerically stable form.
pub fn joint_loss(output: &EnsembleOutput, labels: LabelSet, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be ≥ 0")));
    }
    let target = encode_labels(labels)?;
    let mut loss = 0.0;
    for (g, z) in LabelGroup::ALL.iter().zip(&output.group_logits) {
        let (_, log_norm) = softmax_parts(z);
        loss += log_norm - z[labels.get(*g)];
    }
    if lambda > 0.0 {
        let bce = output
            .global_logits
            .iter()
            .zip(&target)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / target.len() as f64;
        loss += lambda * bce;
    }
    Ok(loss)
}

/// Records the joint objective for `vars`. With `lambda == 0` the global
/// head is left off the loss path entirely.
pub fn joint_loss_on_tape(
    tape: &mut Tape<'_>,
    vars: &EnsembleVars,
    labels: LabelSet,
    lambda: f64,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be ≥ 0")));
    }
    let target = encode_labels(labels)?;
    let mut total: Option<Var> = None;
    for g in LabelGroup::ALL {
        let l = tape.softmax_cross_entropy(vars.group_logits(g), labels.get(g))?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let mut total = total.expect("five groups");
    if lambda > 0.0 {
        let bce = tape.sigmoid_bce(vars.global_logits, &target)?;
        let weighted = tape.scale(bce, lambda);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// Forward plus backward for one sample under the joint objective.
pub fn loss_and_gradients(
    params: &EnsembleParams,
    sample: &Sample,
) -> Result<(f64, Gradients, EnsembleOutput)> {
    let mut tape = Tape::new(&params.store);
    let vars = ensemble_forward_on_tape(&mut tape, params, sample)?;
    let loss = joint_loss_on_tape(&mut tape, &vars, sample.labels, params.config.global_weight)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).item()?;
    Ok((value, grads, EnsembleOutput::from_tape(&tape, &vars)))
}

pub fn predict_sample(params: &EnsembleParams, sample: &Sample) -> Result<LabelSet> {
    Ok(ensemble_forward(params, sample)?.predict())
}
