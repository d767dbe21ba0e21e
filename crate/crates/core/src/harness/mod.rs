//! Cross-validation, ablation grid and report aggregation.

mod aggregate;
mod eval;
mod experiment;

pub use aggregate::{
    aggregate, aggregate_prompt_csv, aggregate_trait_csv, compare_reports, comparison_csv, mean_sd, AggCell,
    AggregateReport, CellDelta, CellKind, DeltaReport,
};
pub use eval::{evaluate_gold, evaluate_policy, predict, report_predictions, Prediction};
pub use experiment::{
    pretrain_fold, run_ablation_grid, run_cross_validation, run_variant, ExperimentConfig, FoldRun, FoldStatus,
    GridReport, PreparedExperiment, Pretrained, RunSeeds,
};
