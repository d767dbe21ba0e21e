use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregateReport};
use super::eval::evaluate_policy;
use crate::corpus::{
    generate_corpus, load_prompt_schema, make_folds, split_hash, trait_prediction_order_with, CorpusConfig,
    EssayRecord, FoldSplit, Schema, TieBreak, TraitId,
};
use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;
use crate::policy::{supervised_train, AnchorModel, PolicyConfig, PolicyParams, PretrainConfig, PretrainCurve};
use crate::ppo::{train_rl, ScoringTask, TrainerConfig, TrainingLog, Variant};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub trainer: TrainerConfig,
    pub variant: Variant,
    pub folds: usize,
    pub seeds_per_fold: usize,
    /// Master seed for fold assignment and every derived training seed.
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            policy: PolicyConfig::default(),
            pretrain: PretrainConfig::default(),
            trainer: TrainerConfig::default(),
            variant: Variant::BiQ,
            folds: 5,
            seeds_per_fold: 1,
            seed: 0,
            tie_break: TieBreak::default(),
        }
    }
}

/// Seeds for one (fold, repetition) run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub init: u64,
    pub pretrain: u64,
    pub trainer: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.policy.validate()?;
        self.pretrain.validate()?;
        self.trainer.validate()?;
        if self.folds < 3 {
            return Err(Error::Config(format!("need at least 3 folds for train/dev/test, got {}", self.folds)));
        }
        if self.seeds_per_fold == 0 {
            return Err(Error::Config("seeds_per_fold must be positive".into()));
        }
        Ok(())
    }

    /// Sets the master seed and the corpus seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn run_seeds(&self, fold: usize, rep: usize) -> RunSeeds {
        let base = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((fold as u64) << 20)
            .wrapping_add(rep as u64);
        RunSeeds { init: base, pretrain: base.wrapping_add(1), trainer: base.wrapping_add(2) }
    }
}

/// Corpus, vocabulary and fold splits shared by every run of an experiment.
#[derive(Clone, Debug)]
pub struct PreparedExperiment {
    pub schema: Schema,
    pub vocab: Vocabulary,
    pub order: Vec<TraitId>,
    pub corpus: Vec<EssayRecord>,
    pub splits: Vec<FoldSplit>,
    pub split_hash: String,
}

impl PreparedExperiment {
    /// Generates the synthetic corpus described by `config`.
    pub fn synthetic(config: &ExperimentConfig) -> Result<Self> {
        let schema = load_prompt_schema();
        let corpus = generate_corpus(&schema, &config.corpus)?;
        let vocab = config.corpus.vocabulary(&schema);
        Self::new(schema, vocab, corpus, config)
    }

    /// Uses `corpus` as given, assigning folds when any record lacks one.
    pub fn new(schema: Schema, vocab: Vocabulary, mut corpus: Vec<EssayRecord>, config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let k = config.folds;
        if corpus.iter().any(|r| r.fold.is_none_or(|f| f >= k)) {
            make_folds(&mut corpus, k, config.seed)?;
        }
        let splits = (0..k).map(|f| FoldSplit::new(&corpus, f, k)).collect::<Result<Vec<_>>>()?;
        let order = trait_prediction_order_with(&schema, config.tie_break);
        let split_hash = split_hash(&corpus);
        Ok(PreparedExperiment { schema, vocab, order, corpus, splits, split_hash })
    }

    pub fn task(&self) -> ScoringTask<'_> {
        ScoringTask { schema: &self.schema, vocab: &self.vocab, order: &self.order }
    }

    pub fn essays(&self, ids: &BTreeSet<u64>) -> Vec<&EssayRecord> {
        FoldSplit::select(&self.corpus, ids)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FoldStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: usize,
    pub rep: usize,
    pub seeds: RunSeeds,
    pub status: FoldStatus,
    /// Greedy evaluation on the test fold.
    pub report: Option<EvaluationReport>,
    pub pretrain: Option<PretrainCurve>,
    pub log: Option<TrainingLog>,
    /// Every id used for training or early stopping is outside the test fold.
    pub leak_free: bool,
}

/// Supervised policy for one (fold, repetition).
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub fold: usize,
    pub rep: usize,
    pub params: PolicyParams,
    pub curve: PretrainCurve,
}

fn ids(essays: &[&EssayRecord]) -> BTreeSet<u64> {
    essays.iter().map(|e| e.essay_id).collect()
}

pub fn pretrain_fold(prep: &PreparedExperiment, config: &ExperimentConfig, fold: usize, rep: usize) -> Result<Pretrained> {
    let split = &prep.splits[fold];
    let train = prep.essays(&split.train);
    let dev = prep.essays(&split.dev);
    let seeds = config.run_seeds(fold, rep);
    let init = PolicyParams::new(PolicyConfig { init_seed: seeds.init, ..config.policy.clone() }, prep.vocab.len())?;
    let pc = PretrainConfig { seed: seeds.pretrain, ..config.pretrain.clone() };
    let (params, curve) = supervised_train(init, &train, &dev, &prep.order, &prep.vocab, &pc)?;
    Ok(Pretrained { fold, rep, params, curve })
}

/// RL stage (unless baseline) and test-fold evaluation from a pretrained policy.
pub fn run_variant(
    prep: &PreparedExperiment,
    config: &ExperimentConfig,
    pretrained: &Pretrained,
    variant: &Variant,
) -> FoldRun {
    let (fold, rep) = (pretrained.fold, pretrained.rep);
    let seeds = config.run_seeds(fold, rep);
    let split = &prep.splits[fold];
    let train = prep.essays(&split.train);
    let test = prep.essays(&split.test);
    let used: BTreeSet<u64> = ids(&train).union(&split.dev).copied().collect();
    let leak_free = split.is_leak_free() && used.is_disjoint(&ids(&test));
    let mut run = FoldRun {
        fold,
        rep,
        seeds,
        status: FoldStatus::Completed,
        report: None,
        pretrain: Some(pretrained.curve.clone()),
        log: None,
        leak_free,
    };
    let result = (|| -> Result<(PolicyParams, Option<TrainingLog>)> {
        if !leak_free {
            return Err(Error::Validation(format!("fold {fold}: training ids overlap the test fold")));
        }
        if variant.plan().is_none() {
            return Ok((pretrained.params.clone(), None));
        }
        let anchor = AnchorModel::freeze(&pretrained.params);
        let tc = TrainerConfig { seed: seeds.trainer, ..config.trainer.clone() };
        let out = train_rl(pretrained.params.clone(), &anchor, &train, prep.task(), &tc, variant)?;
        if let Some(reason) = &out.log.aborted {
            return Err(Error::NonFinite(reason.clone()));
        }
        Ok((out.policy, Some(out.log)))
    })();
    match result.and_then(|(params, log)| {
        run.log = log;
        evaluate_policy(&variant.to_string(), &params, &test, prep.task())
    }) {
        Ok(report) => run.report = Some(report),
        Err(e) => {
            log::warn!("fold {fold} rep {rep} of {variant} failed: {e}");
            run.status = FoldStatus::Failed { reason: e.to_string() };
        }
    }
    run
}

fn pretrain_or_fail(
    prep: &PreparedExperiment,
    config: &ExperimentConfig,
    fold: usize,
    rep: usize,
) -> std::result::Result<Pretrained, FoldRun> {
    pretrain_fold(prep, config, fold, rep).map_err(|e| {
        log::warn!("fold {fold} rep {rep} pretraining failed: {e}");
        FoldRun {
            fold,
            rep,
            seeds: config.run_seeds(fold, rep),
            status: FoldStatus::Failed { reason: e.to_string() },
            report: None,
            pretrain: None,
            log: None,
            leak_free: prep.splits[fold].is_leak_free(),
        }
    })
}

/// Five-fold (or `config.folds`) cross-validation of `config.variant`.
pub fn run_cross_validation(prep: &PreparedExperiment, config: &ExperimentConfig) -> Result<(AggregateReport, Vec<FoldRun>)> {
    config.validate()?;
    let mut runs = Vec::new();
    for fold in 0..config.folds {
        for rep in 0..config.seeds_per_fold {
            log::info!("{}: fold {fold} rep {rep}", config.variant);
            runs.push(match pretrain_or_fail(prep, config, fold, rep) {
                Ok(p) => run_variant(prep, config, &p, &config.variant),
                Err(failed) => failed,
            });
        }
    }
    let report = aggregate(&config.variant.to_string(), config.variant.is_primary(), &runs, &prep.split_hash, config.folds)?;
    Ok((report, runs))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridReport {
    pub split_hash: String,
    pub variants: Vec<Variant>,
    pub reports: Vec<AggregateReport>,
    pub runs: Vec<Vec<FoldRun>>,
}

/// Runs every variant on shared splits, sharing each fold's pretraining.
/// `workers > 1` trains variants of a fold on parallel threads.
pub fn run_ablation_grid(
    prep: &PreparedExperiment,
    config: &ExperimentConfig,
    variants: &[Variant],
    workers: usize,
) -> Result<GridReport> {
    config.validate()?;
    let mut runs: Vec<Vec<FoldRun>> = vec![Vec::new(); variants.len()];
    for fold in 0..config.folds {
        for rep in 0..config.seeds_per_fold {
            log::info!("grid: fold {fold} rep {rep}");
            match pretrain_or_fail(prep, config, fold, rep) {
                Ok(p) => {
                    let results = run_parallel(variants, workers.max(1), |v| run_variant(prep, config, &p, v));
                    for (slot, r) in runs.iter_mut().zip(results) {
                        slot.push(r);
                    }
                }
                Err(failed) => runs.iter_mut().for_each(|slot| slot.push(failed.clone())),
            }
        }
    }
    let reports = variants
        .iter()
        .zip(&runs)
        .map(|(v, r)| aggregate(&v.to_string(), v.is_primary(), r, &prep.split_hash, config.folds))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport { split_hash: prep.split_hash.clone(), variants: variants.to_vec(), reports, runs })
}

fn run_parallel<T: Send>(items: &[Variant], workers: usize, f: impl Fn(&Variant) -> T + Sync) -> Vec<T> {
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut out: Vec<Option<T>> = (0..items.len()).map(|_| None).collect();
    for (chunk_items, chunk_out) in items.chunks(workers).zip(out.chunks_mut(workers)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_items.iter().map(|v| s.spawn(|| f(v))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("variant worker panicked"));
            }
        });
    }
    out.into_iter().map(|o| o.expect("every slot filled")).collect()
}
