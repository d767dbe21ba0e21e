//! Autoregressive score-generation policy.

mod checkpoint;
mod decode;
mod model;
mod pretrain;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use decode::{generate, token_logprobs, truncate_at_eos, DecodeMode, Generation};
pub use model::{Forward, PolicyConfig, PolicyParams};
pub use pretrain::{cross_entropy, supervised_train, CurvePoint, PretrainConfig, PretrainCurve};

/// Frozen copy of the supervised policy, used as the KL anchor.
#[derive(Clone, Debug)]
pub struct AnchorModel(PolicyParams);

impl AnchorModel {
    pub fn freeze(params: &PolicyParams) -> Self {
        AnchorModel(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}
