//! Agreement metrics, scoring-aware rewards and evaluation reports.

mod kappa;
mod report;
mod reward;

pub use kappa::{qwk, weight_matrix, Kappa, RatingPairSet};
pub use report::{
    evaluate_report, prompt_table_csv, trait_table_csv, CellScore, EvaluationReport, PromptScore,
    TraitScore,
};
pub use reward::{
    batch_qwk, batch_qwk_in, batch_range, bidirectional_q_reward, mse_reward, reward_bundle,
    trait_qwk, BatchItem, ResolvedPair, RewardBundle, TraitKappaScale,
};
