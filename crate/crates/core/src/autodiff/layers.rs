use super::{Tape, Var};
use crate::{Error, Result};

/// Kernel and bias of one 3×3 dense-block layer.
#[derive(Debug, Clone, Copy)]
pub struct DenseLayerVars {
    pub kernel: Var,
    pub bias: Var,
}

/// Concatenative block: layer `i` sees the channel-concatenation of the
/// block input and every earlier layer output, applies ReLU, then a
/// pad-1 stride-1 3×3 convolution producing `growth` channels which are
/// appended. Output has `C + layers.len() * growth` channels.
pub fn dense_block(tape: &mut Tape<'_>, input: Var, layers: &[DenseLayerVars]) -> Result<Var> {
    let mut features = input;
    for layer in layers {
        let channels = tape.value(features).shape()[2];
        let kshape = tape.value(layer.kernel).shape();
        if kshape.len() != 4 || kshape[0] != 3 || kshape[1] != 3 || kshape[2] != channels {
            return Err(Error::Shape(format!(
                "dense layer kernel {kshape:?} does not fit {channels} input channels"
            )));
        }
        let act = tape.relu(features);
        let grown = tape.conv2d(act, layer.kernel, Some(layer.bias), 1, 1)?;
        features = tape.concat(&[features, grown], 2)?;
    }
    Ok(features)
}

/// 2×2 average pooling with stride 2; spatial dims must be even.
pub fn transition_pool(tape: &mut Tape<'_>, input: Var) -> Result<Var> {
    tape.avg_pool(input, 2)
}
