//! Scoring-aware multi-reward PPO.

mod config;
mod gae;
mod loss;
mod rollout;
mod train;

pub use config::{AdvantageNorm, TrainerConfig, Variant, VariantPlan, WeightMode};
pub use gae::{gae, normalize_advantages, standardize, AdvantageEstimates};
pub use loss::{combine_losses, ppo_channel_loss, Channel, ChannelTerms, LossCoefficients, LossWeights};
pub use rollout::{
    collect_rollouts, reward_index, score_batch, shape_batch, shape_rewards, Rollout, RolloutBatch, ScoringTask,
};
pub use train::{
    batch_loss, prepare_batch, train_rl, value_head_loss, BatchLoss, PreparedSequence, RlOutcome, TrainingLog,
    UpdateRecord,
};
