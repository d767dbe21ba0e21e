use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use crate::corpus::{parse_scores, EssayRecord, ParseFailure, Schema, TraitId, TraitScoreVector};
use crate::error::{Error, Result};
use crate::metrics::{reward_bundle, BatchItem, RewardBundle};
use crate::policy::{generate, token_logprobs, AnchorModel, DecodeMode, PolicyParams};
use crate::vocab::Vocabulary;

/// Schema, vocabulary and trait order shared by every scoring call.
#[derive(Clone, Copy, Debug)]
pub struct ScoringTask<'a> {
    pub schema: &'a Schema,
    pub vocab: &'a Vocabulary,
    pub order: &'a [TraitId],
}

impl ScoringTask<'_> {
    /// Length of a complete target sequence, `<eos>` included.
    pub fn target_len(&self) -> usize {
        self.order.len() * 2 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub essay_id: u64,
    pub prompt_id: u32,
    pub tokens: Vec<u32>,
    /// Policy log-probabilities at collection time.
    pub logprobs: Vec<f64>,
    /// Anchor log-probabilities from teacher-forcing the anchor on `tokens`.
    pub anchor_logprobs: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub parsed: std::result::Result<TraitScoreVector, ParseFailure>,
    /// Shaped reward streams for channels Q and M; empty until shaped.
    pub shaped: [Vec<f64>; 2],
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kl_terms(&self) -> Vec<f64> {
        self.logprobs.iter().zip(&self.anchor_logprobs).map(|(p, a)| p - a).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub rollouts: Vec<Rollout>,
    pub bundle: RewardBundle,
}

/// Index of the token that carries the terminal reward: the last content
/// token when the sequence closes with `<eos>`, otherwise the last token.
pub fn reward_index(tokens: &[u32], eos: u32) -> usize {
    match tokens {
        [.., last] if *last == eos && tokens.len() >= 2 => tokens.len() - 2,
        _ => tokens.len().saturating_sub(1),
    }
}

/// Per-token reward stream `−β·(log π − log π_AC)` plus `terminal` at the
/// reward index. With `kl_at_terminal` false the KL term is dropped from the
/// reward index onward.
pub fn shape_rewards(
    logprobs: &[f64],
    anchor_logprobs: &[f64],
    terminal: f64,
    reward_at: usize,
    beta: f64,
    kl_at_terminal: bool,
) -> Result<Vec<f64>> {
    if logprobs.len() != anchor_logprobs.len() || reward_at >= logprobs.len() {
        return Err(Error::Internal(format!(
            "shaping {} policy vs {} anchor log-probs, reward at {reward_at}",
            logprobs.len(),
            anchor_logprobs.len()
        )));
    }
    Ok(logprobs
        .iter()
        .zip(anchor_logprobs)
        .enumerate()
        .map(|(t, (p, a))| {
            let kl = if kl_at_terminal || t < reward_at { -beta * (p - a) } else { 0.0 };
            if t == reward_at { kl + terminal } else { kl }
        })
        .collect())
}

/// Samples one generation per essay, scores the batch and attaches
/// anchor log-probabilities.
pub fn collect_rollouts(
    policy: &PolicyParams,
    anchor: &AnchorModel,
    essays: &[&EssayRecord],
    task: ScoringTask,
    config: &TrainerConfig,
    lambda_q: f64,
    rng: &mut impl Rng,
) -> Result<RolloutBatch> {
    if essays.is_empty() {
        return Err(Error::Empty("rollout batch".into()));
    }
    let mode = DecodeMode::Sampled { temperature: config.temperature };
    let mut rollouts = Vec::with_capacity(essays.len());
    for e in essays {
        let prompt = task
            .schema
            .prompt(e.prompt_id)
            .ok_or_else(|| Error::Validation(format!("essay {} has unknown prompt {}", e.essay_id, e.prompt_id)))?;
        let out = generate(policy, &e.tokens, task.vocab, mode, task.target_len(), rng)?;
        let anchor_logprobs = token_logprobs(anchor.params(), &e.tokens, &out.tokens, task.vocab)?;
        let parsed = parse_scores(&out.tokens, prompt, task.order, task.vocab);
        rollouts.push(Rollout {
            essay_id: e.essay_id,
            prompt_id: e.prompt_id,
            tokens: out.tokens,
            logprobs: out.logprobs,
            anchor_logprobs,
            values: out.values,
            parsed,
            shaped: [Vec::new(), Vec::new()],
        });
    }
    let bundle = score_batch(&rollouts, essays, task, config, lambda_q)?;
    Ok(RolloutBatch { rollouts, bundle })
}

/// Recomputes the reward bundle from parsed rollouts.
pub fn score_batch(
    rollouts: &[Rollout],
    essays: &[&EssayRecord],
    task: ScoringTask,
    config: &TrainerConfig,
    lambda_q: f64,
) -> Result<RewardBundle> {
    let items: Vec<BatchItem> = rollouts
        .iter()
        .zip(essays)
        .map(|(r, e)| {
            let prompt = task.schema.prompt(e.prompt_id).expect("prompt checked at collection");
            BatchItem::new(prompt, &e.gold, r.parsed.as_ref().ok())
        })
        .collect();
    reward_bundle(&items, lambda_q, config.trait_scale)
}

/// Fills both channels' shaped streams of every rollout.
pub fn shape_batch(batch: &mut RolloutBatch, eos: u32, config: &TrainerConfig) -> Result<()> {
    for (i, r) in batch.rollouts.iter_mut().enumerate() {
        let at = reward_index(&r.tokens, eos);
        r.shaped = [
            shape_rewards(&r.logprobs, &r.anchor_logprobs, batch.bundle.r_q[i], at, config.beta, config.kl_at_terminal)?,
            shape_rewards(&r.logprobs, &r.anchor_logprobs, batch.bundle.r_m, at, config.beta, config.kl_at_terminal)?,
        ];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn zero_kl_stream() {
        let lp = [-0.5, -1.0, -0.1, -0.2];
        let s = shape_rewards(&lp, &lp, 1.0, 3, 0.05, true).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 0.0, 1.0]);
        let s = shape_rewards(&[-0.5, -1.0], &[-0.7, -0.2], 0.4, 1, 0.0, true).unwrap();
        assert_eq!(s, vec![0.0, 0.4]);
    }

    #[test]
    fn terminal_kl_flag() {
        let s = shape_rewards(&[-1.0, -1.0, -1.0], &[-2.0, -2.0, -2.0], 1.0, 1, 0.5, false).unwrap();
        assert_eq!(s, vec![-0.5, 1.0, 0.0]);
        assert!(shape_rewards(&[-1.0], &[-1.0, -2.0], 1.0, 0, 0.5, true).is_err());
    }

    #[test]
    fn reward_index_rules() {
        assert_eq!(reward_index(&[5, 6, 2], 2), 1);
        assert_eq!(reward_index(&[5, 6, 7], 2), 2);
        assert_eq!(reward_index(&[2], 2), 0);
    }

    proptest! {
        #[test]
        fn stream_matches_elementwise_formula_and_conserves(
            pair in (1usize..20).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..0.0, n),
                prop::collection::vec(-5.0f64..0.0, n),
                0..n,
            )),
            r in -1.0f64..1.0,
            beta in 0.0f64..1.0,
        ) {
            let (lp, ap, at) = pair;
            let s = shape_rewards(&lp, &ap, r, at, beta, true).unwrap();
            for t in 0..lp.len() {
                let expect = -beta * (lp[t] - ap[t]) + if t == at { r } else { 0.0 };
                prop_assert!((s[t] - expect).abs() < 1e-12);
            }
            let kl: f64 = lp.iter().zip(&ap).map(|(p, a)| p - a).sum();
            prop_assert!((s.iter().sum::<f64>() - (r - beta * kl)).abs() < 1e-10);
        }
    }
}
