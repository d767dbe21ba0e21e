use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use samrl::corpus::{generate_corpus, ingest_external_corpus, read_jsonl, write_jsonl, EssayRecord, Schema};
use samrl::harness::{
    aggregate_prompt_csv, aggregate_trait_csv, comparison_csv, evaluate_gold, evaluate_policy, pretrain_fold,
    run_ablation_grid, AggregateReport, ExperimentConfig, GridReport, PreparedExperiment,
};
use samrl::metrics::{prompt_table_csv, trait_table_csv, EvaluationReport};
use samrl::policy::{AnchorModel, Checkpoint};
use samrl::ppo::{train_rl, TrainerConfig, Variant};
use samrl::vocab::PREFIX_WORDS;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::manifest::{write_atomic, RunManifest, RunStatus};

/// Settings shared by every command.
pub struct RunContext {
    pub config: LoadedConfig,
    pub schema: Schema,
    pub out: PathBuf,
}

impl RunContext {
    fn cfg(&self) -> &ExperimentConfig {
        &self.config.experiment
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Runs `body`, then writes `manifest-{tag}.json` whatever the outcome.
    pub fn run(
        &self,
        command: &str,
        tag: &str,
        body: impl FnOnce(&mut RunManifest) -> Result<RunStatus>,
    ) -> Result<RunStatus> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let mut manifest = RunManifest::begin(command, self.config.path.clone(), &self.config.sha256, self.cfg().seed);
        let result = body(&mut manifest);
        let status = match &result {
            Ok(s) => s.clone(),
            Err(e) => {
                manifest.failures.push(format!("{e:#}"));
                RunStatus::Failed
            }
        };
        manifest.finish(status, &self.path(&format!("manifest-{tag}.json")))?;
        result
    }

    fn write(&self, manifest: &mut RunManifest, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        manifest.add(&path)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, manifest: &mut RunManifest, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(manifest, name, &bytes)
    }

    fn prepare(&self, corpus: Option<&Path>) -> Result<PreparedExperiment> {
        let cfg = self.cfg();
        let vocab = cfg.corpus.vocabulary(&self.schema);
        let records = match corpus {
            Some(p) => {
                let f = fs::File::open(p).with_context(|| format!("opening corpus {}", p.display()))?;
                read_jsonl(BufReader::new(f)).with_context(|| format!("reading corpus {}", p.display()))?
            }
            None => generate_corpus(&self.schema, &cfg.corpus)?,
        };
        for r in &records {
            if self.schema.prompt(r.prompt_id).is_none() {
                bail!("essay {} refers to prompt {} which is not in the schema", r.essay_id, r.prompt_id);
            }
            if let Some(&t) = r.tokens.iter().find(|&&t| vocab.check(t).is_err()) {
                bail!("essay {} has token {t} outside the configured vocabulary", r.essay_id);
            }
        }
        Ok(PreparedExperiment::new(self.schema.clone(), vocab, records, cfg)?)
    }

    fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.cfg().folds {
            bail!("fold {fold} out of range for {} folds", self.cfg().folds);
        }
        Ok(())
    }

    fn load_checkpoint(&self, path: &Path, prep: &PreparedExperiment) -> Result<Checkpoint> {
        let ck = Checkpoint::load(path, Some(&self.schema.hash()))
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        if ck.vocab != prep.vocab {
            bail!("checkpoint vocabulary differs from the configured corpus vocabulary");
        }
        if ck.order != prep.order {
            bail!("checkpoint trait order differs from the configured tie-break");
        }
        Ok(ck)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
    All,
}

fn split_ids(prep: &PreparedExperiment, fold: usize, split: Split) -> BTreeSet<u64> {
    let s = &prep.splits[fold];
    match split {
        Split::Train => s.train.clone(),
        Split::Dev => s.dev.clone(),
        Split::Test => s.test.clone(),
        Split::All => prep.corpus.iter().map(|r| r.essay_id).collect(),
    }
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    train: usize,
    dev: usize,
    test: usize,
}

#[derive(Serialize)]
struct CorpusSummary {
    records: usize,
    prompts: usize,
    split_hash: String,
    folds: Vec<FoldSummary>,
}

pub fn gen_corpus(ctx: &RunContext, from_tsv: Option<&Path>) -> Result<RunStatus> {
    ctx.run("gen-corpus", "gen-corpus", |m| {
        let cfg = ctx.cfg();
        let vocab = cfg.corpus.vocabulary(&ctx.schema);
        let records: Vec<EssayRecord> = match from_tsv {
            Some(p) => {
                let max_body = cfg.policy.max_source_len.saturating_sub(PREFIX_WORDS.len() + 2).max(1);
                ingest_external_corpus(p, &ctx.schema, &vocab, max_body)
                    .with_context(|| format!("ingesting {}", p.display()))?
            }
            None => generate_corpus(&ctx.schema, &cfg.corpus)?,
        };
        let prep = PreparedExperiment::new(ctx.schema.clone(), vocab, records, cfg)?;
        let mut buf = Vec::new();
        write_jsonl(&prep.corpus, &mut buf)?;
        ctx.write(m, "corpus.jsonl", &buf)?;
        let summary = CorpusSummary {
            records: prep.corpus.len(),
            prompts: prep.corpus.iter().map(|r| r.prompt_id).collect::<BTreeSet<_>>().len(),
            split_hash: prep.split_hash.clone(),
            folds: prep
                .splits
                .iter()
                .map(|s| FoldSummary { fold: s.fold, train: s.train.len(), dev: s.dev.len(), test: s.test.len() })
                .collect(),
        };
        ctx.write_json(m, "corpus-summary.json", &summary)?;
        Ok(RunStatus::Completed)
    })
}

pub fn pretrain(ctx: &RunContext, corpus: &Path, fold: usize, rep: usize) -> Result<RunStatus> {
    ctx.run("pretrain", &format!("pretrain-fold{fold}"), |m| {
        ctx.check_fold(fold)?;
        let prep = ctx.prepare(Some(corpus))?;
        let pre = pretrain_fold(&prep, ctx.cfg(), fold, rep)?;
        for p in &pre.curve.points {
            log::info!("step {} epoch {} train {:.4} dev {:.4}", p.step, p.epoch, p.train_loss, p.dev_loss);
        }
        log::info!(
            "best dev loss {:.4} at step {}{}",
            pre.curve.best_dev_loss,
            pre.curve.best_step,
            if pre.curve.stopped_early { " (stopped early)" } else { "" }
        );
        let mut ck = Checkpoint::new("pretrain", &prep.schema, &prep.vocab, &prep.order, pre.params);
        ck.hyperparameters = serde_json::json!({
            "policy": ctx.cfg().policy,
            "pretrain": ctx.cfg().pretrain,
            "fold": fold,
            "rep": rep,
            "seeds": ctx.cfg().run_seeds(fold, rep),
            "split_hash": prep.split_hash,
        });
        let path = ctx.path(&format!("pretrain-fold{fold}.ckpt.json"));
        ck.save(&path)?;
        m.add(&path)?;
        ctx.write_json(m, &format!("pretrain-fold{fold}.curve.json"), &pre.curve)?;
        Ok(RunStatus::Completed)
    })
}

/// Flag overrides for the trainer section.
#[derive(Clone, Debug, Default)]
pub struct TrainerOverrides {
    pub beta: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub lambda_q: Option<f64>,
    pub gamma: Option<f64>,
    pub updates: Option<usize>,
}

impl TrainerOverrides {
    fn apply(&self, mut t: TrainerConfig) -> TrainerConfig {
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.clip_epsilon {
            t.clip_epsilon = v;
        }
        if let Some(v) = self.lambda_q {
            t.lambda_q = v;
        }
        if let Some(v) = self.gamma {
            t.gamma = v;
        }
        if let Some(v) = self.updates {
            t.updates = v;
        }
        t
    }
}

pub fn train(
    ctx: &RunContext,
    checkpoint: &Path,
    corpus: &Path,
    fold: usize,
    rep: usize,
    variant: Option<&Variant>,
    overrides: &TrainerOverrides,
) -> Result<RunStatus> {
    let variant = variant.cloned().unwrap_or_else(|| ctx.cfg().variant.clone());
    ctx.run("train", &format!("train-{variant}-fold{fold}"), |m| {
        ctx.check_fold(fold)?;
        if variant.plan().is_none() {
            bail!("variant {variant} has no RL stage; evaluate the pretrained checkpoint instead");
        }
        let prep = ctx.prepare(Some(corpus))?;
        let ck = ctx.load_checkpoint(checkpoint, &prep)?;
        let mut tc = overrides.apply(ctx.cfg().trainer.clone());
        tc.seed = ctx.cfg().run_seeds(fold, rep).trainer;
        tc.validate()?;
        let train = prep.essays(&prep.splits[fold].train);
        let anchor = AnchorModel::freeze(&ck.params);
        let out = train_rl(ck.params.clone(), &anchor, &train, prep.task(), &tc, &variant)?;

        let mut buf = Vec::new();
        out.log.write_jsonl(&mut buf)?;
        ctx.write(m, &format!("{variant}-fold{fold}.log.jsonl"), &buf)?;
        if let Some(reason) = &out.log.aborted {
            bail!("training aborted: {reason}");
        }
        let mut rl = Checkpoint::new(&format!("rl:{variant}"), &prep.schema, &prep.vocab, &prep.order, out.policy);
        rl.hyperparameters = serde_json::json!({
            "variant": variant,
            "trainer": tc,
            "fold": fold,
            "rep": rep,
            "weights": out.weights.normalized(),
            "parent": ck.hyperparameters,
        });
        let path = ctx.path(&format!("{variant}-fold{fold}.ckpt.json"));
        rl.save(&path)?;
        m.add(&path)?;
        Ok(RunStatus::Completed)
    })
}

pub fn eval(
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    corpus: &Path,
    fold: usize,
    split: Split,
    oracle_gold: bool,
    name: Option<&str>,
) -> Result<RunStatus> {
    let split_name = format!("{split:?}").to_lowercase();
    let tag_name = match (name, oracle_gold, checkpoint) {
        (Some(n), _, _) => n.to_string(),
        (None, true, _) => "gold".into(),
        (None, false, Some(p)) => p
            .file_name()
            .and_then(|s| s.to_str())
            .map(|s| {
                let s = s.trim_end_matches(".json").trim_end_matches(".ckpt");
                s.strip_suffix(&format!("-fold{fold}")).unwrap_or(s).to_string()
            })
            .unwrap_or_else(|| "model".into()),
        (None, false, None) => "model".into(),
    };
    let stem = format!("eval-{tag_name}-fold{fold}-{split_name}");
    ctx.run("eval", &stem, |m| {
        ctx.check_fold(fold)?;
        let prep = ctx.prepare(Some(corpus))?;
        let essays = prep.essays(&split_ids(&prep, fold, split));
        let report: EvaluationReport = if oracle_gold {
            evaluate_gold(&tag_name, &essays, prep.task())?
        } else {
            let Some(path) = checkpoint else { bail!("--checkpoint is required unless --oracle-gold is set") };
            let ck = ctx.load_checkpoint(path, &prep)?;
            evaluate_policy(&tag_name, &ck.params, &essays, prep.task())?
        };
        log::info!(
            "{tag_name}: trait average {:.4}, prompt average {:.4}, parse failures {:.3}",
            report.trait_average,
            report.prompt_average,
            report.parse_failure_rate
        );
        ctx.write_json(m, &format!("{stem}.json"), &report)?;
        ctx.write(m, &format!("{stem}.traits.csv"), trait_table_csv(&[&report])?.as_bytes())?;
        ctx.write(m, &format!("{stem}.prompts.csv"), prompt_table_csv(&[&report])?.as_bytes())?;
        Ok(RunStatus::Completed)
    })
}

pub fn ablate(ctx: &RunContext, corpus: Option<&Path>, variants: &[Variant], workers: usize) -> Result<RunStatus> {
    ctx.run("ablate", "ablate", |m| {
        let variants: Vec<Variant> = if variants.is_empty() { Variant::grid() } else { variants.to_vec() };
        if !variants.contains(&Variant::ArtsBaseline) {
            bail!("the ablation grid needs the arts baseline for its comparison table");
        }
        let prep = ctx.prepare(corpus)?;
        let grid = run_ablation_grid(&prep, ctx.cfg(), &variants, workers)?;
        ctx.write_json(m, "grid.json", &grid)?;
        let reports: Vec<&AggregateReport> = grid.reports.iter().collect();
        let baseline = grid.reports.iter().find(|r| r.model == Variant::ArtsBaseline.to_string()).expect("checked above");
        ctx.write(m, "grid-traits.csv", aggregate_trait_csv(&reports)?.as_bytes())?;
        ctx.write(m, "grid-prompts.csv", aggregate_prompt_csv(&reports)?.as_bytes())?;
        ctx.write(m, "comparison.csv", comparison_csv(&reports, baseline)?.as_bytes())?;
        let mut status = RunStatus::Completed;
        for r in &grid.reports {
            for (fold, reason) in &r.failed_folds {
                m.failures.push(format!("{} fold {fold}: {reason}", r.model));
                status = RunStatus::Partial;
            }
        }
        Ok(status)
    })
}

enum Loaded {
    Eval(EvaluationReport),
    Aggregate(Vec<AggregateReport>),
}

fn load_report(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(g) = serde_json::from_slice::<GridReport>(&bytes) {
        return Ok(Loaded::Aggregate(g.reports));
    }
    if let Ok(a) = serde_json::from_slice::<AggregateReport>(&bytes) {
        return Ok(Loaded::Aggregate(vec![a]));
    }
    match serde_json::from_slice::<EvaluationReport>(&bytes) {
        Ok(e) => Ok(Loaded::Eval(e)),
        Err(e) => bail!("{} is not an evaluation, aggregate or grid report: {e}", path.display()),
    }
}

pub fn report(ctx: &RunContext, inputs: &[PathBuf], baseline: Option<&str>) -> Result<RunStatus> {
    ctx.run("report", "report", |m| {
        if inputs.is_empty() {
            bail!("no report files given");
        }
        let mut evals = Vec::new();
        let mut aggs = Vec::new();
        for p in inputs {
            match load_report(p)? {
                Loaded::Eval(e) => evals.push(e),
                Loaded::Aggregate(a) => aggs.extend(a),
            }
        }
        if !evals.is_empty() && !aggs.is_empty() {
            bail!("cannot mix single evaluation reports with aggregate reports");
        }
        if !evals.is_empty() {
            let refs: Vec<&EvaluationReport> = evals.iter().collect();
            ctx.write(m, "report-traits.csv", trait_table_csv(&refs)?.as_bytes())?;
            ctx.write(m, "report-prompts.csv", prompt_table_csv(&refs)?.as_bytes())?;
            if baseline.is_some() {
                bail!("--baseline applies to aggregate reports only");
            }
        } else {
            let refs: Vec<&AggregateReport> = aggs.iter().collect();
            ctx.write(m, "report-traits.csv", aggregate_trait_csv(&refs)?.as_bytes())?;
            ctx.write(m, "report-prompts.csv", aggregate_prompt_csv(&refs)?.as_bytes())?;
            if let Some(name) = baseline {
                let Some(base) = aggs.iter().find(|a| a.model == name) else {
                    bail!("baseline {name} not found among the reports");
                };
                ctx.write(m, "report-comparison.csv", comparison_csv(&refs, base)?.as_bytes())?;
            }
        }
        Ok(RunStatus::Completed)
    })
}
