#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samrl::corpus::{CorpusConfig, EssayRecord};
use samrl::harness::{ExperimentConfig, PreparedExperiment};
use samrl::policy::{AnchorModel, PolicyConfig, PolicyParams, PretrainConfig};
use samrl::ppo::{collect_rollouts, prepare_batch, shape_batch, PreparedSequence, TrainerConfig};

pub fn micro_config() -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusConfig { essays_per_prompt: 10, ..CorpusConfig::default() },
        policy: PolicyConfig { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, ..PolicyConfig::default() },
        pretrain: PretrainConfig { epochs: 1, ..PretrainConfig::default() },
        trainer: TrainerConfig { updates: 3, value_warmup: 1, ppo_epochs: 2, ..TrainerConfig::default() },
        folds: 5,
        ..ExperimentConfig::default()
    }
}

pub fn micro() -> (ExperimentConfig, PreparedExperiment) {
    let cfg = micro_config();
    let prep = PreparedExperiment::synthetic(&cfg).unwrap();
    (cfg, prep)
}

/// Two short rollouts from a tiny policy, with collection-time log-probs
/// perturbed so PPO ratios differ from 1.
pub fn micro_batch() -> (PolicyParams, Vec<PreparedSequence>, u32) {
    let (cfg, prep) = micro();
    let pc = PolicyConfig { d_model: 4, n_heads: 2, n_layers: 1, d_ff: 4, init_seed: 3, ..PolicyConfig::default() };
    let p = PolicyParams::new(pc, prep.vocab.len()).unwrap();
    let anchor = AnchorModel::freeze(&p);
    let essays: Vec<_> = prep.essays(&prep.splits[0].train).into_iter().take(2).map(|e| {
        let mut e = e.clone();
        e.tokens.truncate(10);
        e
    }).collect();
    let refs: Vec<&EssayRecord> = essays.iter().collect();
    let tc = TrainerConfig { beta: 0.1, ..cfg.trainer.clone() };
    let mut batch = collect_rollouts(&p, &anchor, &refs, prep.task(), &tc, 0.5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for r in &mut batch.rollouts {
        r.tokens.truncate(6);
        r.logprobs.truncate(6);
        r.anchor_logprobs.truncate(6);
        r.values.truncate(6);
        // move the collection-time policy away from the current one
        for (i, l) in r.logprobs.iter_mut().enumerate() {
            *l -= 0.15 * ((i % 3) as f64 - 1.0);
        }
    }
    shape_batch(&mut batch, prep.vocab.eos(), &tc).unwrap();
    let seqs = prepare_batch(&batch, &refs, &tc).unwrap();
    (p, seqs, prep.vocab.bos())
}
