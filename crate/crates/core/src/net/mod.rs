//! Group-wise ensemble of dense-block encoders with a shared global head.

mod config;
mod model;

pub use config::{EncoderConfig, NetConfig};
pub use model::{
    ensemble_forward, ensemble_forward_on_tape, group_block_forward, joint_loss,
    joint_loss_on_tape, loss_and_gradients, predict_sample, reshape_sample, unreshape, BlockVars,
    DenseLayerParams, EncoderParams, EnsembleOutput, EnsembleParams, EnsembleVars,
    GroupBlockParams,
};

#[cfg(test)]
mod tests;
