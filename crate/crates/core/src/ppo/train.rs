use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AdvantageNorm, TrainerConfig, Variant, VariantPlan};
use super::gae::{gae, standardize};
use super::loss::{ppo_channel_loss, Channel, ChannelTerms, LossCoefficients, LossWeights};
use super::rollout::{collect_rollouts, shape_batch, RolloutBatch, ScoringTask};
use crate::corpus::EssayRecord;
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Matrix};
use crate::policy::{AnchorModel, PolicyParams};

/// One sequence with everything the PPO loss needs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSequence {
    pub essay: Vec<u32>,
    pub tokens: Vec<u32>,
    pub old_logprobs: Vec<f64>,
    /// Normalized advantages per channel.
    pub advantages: [Vec<f64>; 2],
    pub returns: [Vec<f64>; 2],
}

/// Runs GAE per rollout and channel, then normalizes each channel's
/// advantages over the whole batch.
pub fn prepare_batch(batch: &RolloutBatch, essays: &[&EssayRecord], config: &TrainerConfig) -> Result<Vec<PreparedSequence>> {
    let mut adv: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut ret: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for r in &batch.rollouts {
        for ch in Channel::ALL {
            let k = ch.index();
            let values: Vec<f64> = r.values.iter().map(|v| v[k]).collect();
            let est = gae(&r.shaped[k], &values, config.gamma, config.gae_lambda)?;
            adv[k].push(est.advantages);
            ret[k].push(est.returns);
        }
    }
    for a in adv.iter_mut() {
        match config.advantage_norm {
            AdvantageNorm::Batch => {
                standardize(a, true);
            }
            AdvantageNorm::ScaleOnly => {
                standardize(a, false);
            }
            AdvantageNorm::None => {}
        }
    }
    let [aq, am] = adv;
    let [rq, rm] = ret;
    Ok(batch
        .rollouts
        .iter()
        .zip(essays)
        .zip(aq.into_iter().zip(am))
        .zip(rq.into_iter().zip(rm))
        .map(|(((r, e), (aq, am)), (rq, rm))| PreparedSequence {
            essay: e.tokens.clone(),
            tokens: r.tokens.clone(),
            old_logprobs: r.logprobs.clone(),
            advantages: [aq, am],
            returns: [rq, rm],
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Per-channel terms; `None` for inactive channels.
    pub channels: [Option<ChannelTerms>; 2],
    pub total: f64,
    /// Sequences dropped for a non-finite probability ratio.
    pub skipped: usize,
}

/// Weighted PPO loss over a prepared batch and its parameter gradients.
pub fn batch_loss(
    params: &PolicyParams,
    seqs: &[PreparedSequence],
    plan: &VariantPlan,
    weights: [f64; 2],
    coef: &LossCoefficients,
    bos: u32,
) -> Result<(BatchLoss, Vec<Matrix>)> {
    let active: Vec<Channel> = Channel::ALL
        .into_iter()
        .filter(|c| match c {
            Channel::Q => plan.use_q,
            Channel::M => plan.use_m,
        })
        .collect();
    let norm = seqs.iter().map(|s| s.tokens.len()).sum::<usize>() as f64;
    let mut grads = params.store().zeros_like();
    let mut out = BatchLoss::default();
    for ch in &active {
        out.channels[ch.index()] = Some(ChannelTerms::default());
    }
    for s in seqs {
        let mut g = Graph::new(params.store());
        let f = params.forward(&mut g, &s.essay, &s.tokens, bos)?;
        let (logits, values) = (g.value(f.logits), g.value(f.values));
        let mut dl = Matrix::zeros(logits.rows, logits.cols);
        let mut dv = Matrix::zeros(values.rows, values.cols);
        let mut per_channel = Vec::with_capacity(active.len());
        let mut failed = false;
        for &ch in &active {
            let k = ch.index();
            match ppo_channel_loss(logits, values, &s.tokens, &s.old_logprobs, &s.advantages[k], &s.returns[k], ch, coef, norm) {
                Ok(r) => per_channel.push((ch, r)),
                Err(Error::NonFinite(msg)) => {
                    log::warn!("skipping sequence: {msg}");
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            out.skipped += 1;
            continue;
        }
        for (ch, (terms, cdl, mut cdv)) in per_channel {
            let w = weights[ch.index()];
            let mut cdl = cdl;
            cdl.scale_assign(w);
            cdv.scale_assign(w);
            dl.add_assign(&cdl);
            dv.add_assign(&cdv);
            out.channels[ch.index()].as_mut().expect("active channel").accumulate(&terms);
        }
        g.backward(vec![(f.logits, dl), (f.values, dv)], &mut grads);
    }
    out.total = out
        .channels
        .iter()
        .zip(weights)
        .filter_map(|(c, w)| c.map(|c| w * c.total()))
        .sum();
    Ok((out, grads))
}

/// Value-only loss `c1·E[(V − R)²]` summed over channels, with gradients
/// restricted to the value head.
pub fn value_head_loss(params: &PolicyParams, seqs: &[PreparedSequence], c1: f64, bos: u32) -> Result<(f64, Vec<Matrix>)> {
    let norm = seqs.iter().map(|s| s.tokens.len()).sum::<usize>() as f64;
    let mut grads = params.store().zeros_like();
    let mut loss = 0.0;
    for s in seqs {
        let mut g = Graph::new(params.store());
        let f = params.forward(&mut g, &s.essay, &s.tokens, bos)?;
        let values = g.value(f.values);
        let mut dv = Matrix::zeros(values.rows, values.cols);
        for t in 0..values.rows {
            for k in 0..2 {
                let diff = values.get(t, k) - s.returns[k][t];
                loss += c1 * diff * diff / norm;
                dv.set(t, k, 2.0 * c1 * diff / norm);
            }
        }
        g.backward(vec![(f.values, dv)], &mut grads);
    }
    let head = params.value_head().map(|id| id.index());
    for (i, g) in grads.iter_mut().enumerate() {
        if !head.contains(&i) {
            g.data.fill(0.0);
        }
    }
    Ok((loss, grads))
}

/// Per-update training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    /// Mean per-token shaped reward for channels Q and M.
    pub mean_shaped: [f64; 2],
    pub mean_r_q: f64,
    pub r_m: f64,
    pub q_b: f64,
    /// Mean per-token `log π − log π_AC` at collection.
    pub mean_kl: f64,
    pub parse_failure_rate: f64,
    pub w_q: f64,
    pub w_m: f64,
    /// Channel losses averaged over PPO epochs; absent for inactive channels.
    pub loss_q: Option<f64>,
    pub loss_m: Option<f64>,
    pub loss_total: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub skipped_sequences: usize,
    pub nonfinite: bool,
    pub weight_alarm: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<UpdateRecord>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl TrainingLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut log = TrainingLog::default();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                log.records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(log)
    }

    /// Mean of `f` over records `[from, to)`.
    pub fn window_mean(&self, from: usize, to: usize, f: impl Fn(&UpdateRecord) -> f64) -> f64 {
        let w = &self.records[from.min(self.records.len())..to.min(self.records.len())];
        w.iter().map(f).sum::<f64>() / w.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct RlOutcome {
    /// Final parameters, or the last finite ones after an abort.
    pub policy: PolicyParams,
    pub weights: LossWeights,
    pub log: TrainingLog,
}

const WEIGHT_ALARM: (f64, f64) = (0.02, 0.98);

/// PPO fine-tuning with scoring-aware rewards under `variant`.
pub fn train_rl(
    policy: PolicyParams,
    anchor: &AnchorModel,
    train: &[&EssayRecord],
    task: ScoringTask,
    config: &TrainerConfig,
    variant: &Variant,
) -> Result<RlOutcome> {
    config.validate()?;
    let plan = variant
        .plan()
        .ok_or_else(|| Error::Config(format!("variant {variant} has no RL stage")))?;
    plan.validate()?;
    if train.len() < config.batch_size {
        return Err(Error::Empty(format!("{} training essays for batch size {}", train.len(), config.batch_size)));
    }
    let lambda_q = plan.lambda_q.unwrap_or(config.lambda_q);
    let coef = LossCoefficients::from(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = policy;
    let mut last_good = policy.clone();
    let mut weights = LossWeights::new(plan.weights);
    let mut opt = Adam::new(config.learning_rate()).with_clip(config.max_grad_norm);
    let mut weight_opt = Adam::new(config.weight_step_size);
    let mut log = TrainingLog::default();
    let mut cycle: Vec<usize> = Vec::new();
    let mut nonfinite_run = 0;
    let mut next_batch = |rng: &mut ChaCha8Rng| {
        let mut picks = Vec::with_capacity(config.batch_size);
        while picks.len() < config.batch_size {
            if cycle.is_empty() {
                cycle = (0..train.len()).collect();
                cycle.shuffle(rng);
                cycle.reverse();
            }
            picks.push(cycle.pop().expect("refilled"));
        }
        picks.iter().map(|&i| train[i]).collect::<Vec<&EssayRecord>>()
    };
    if config.value_warmup > 0 {
        let mut value_opt = Adam::new(config.value_warmup_step_size).with_clip(config.max_grad_norm);
        let mut last = 0.0;
        for _ in 0..config.value_warmup {
            let essays = next_batch(&mut rng);
            let mut batch = collect_rollouts(&policy, anchor, &essays, task, config, lambda_q, &mut rng)?;
            shape_batch(&mut batch, task.vocab.eos(), config)?;
            let seqs = prepare_batch(&batch, &essays, config)?;
            for _ in 0..config.ppo_epochs {
                let (loss, grads) = value_head_loss(&policy, &seqs, config.c1.max(f64::MIN_POSITIVE), task.vocab.bos())?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("value warm-up loss".into()));
                }
                value_opt.step(policy.store_mut().tensors_mut(), &grads);
                last = loss;
            }
        }
        log::debug!("value warm-up finished with loss {last:.4}");
        last_good.clone_from(&policy);
    }
    for update in 0..config.updates {
        let essays = next_batch(&mut rng);
        let mut batch = collect_rollouts(&policy, anchor, &essays, task, config, lambda_q, &mut rng)?;
        shape_batch(&mut batch, task.vocab.eos(), config)?;
        let seqs = prepare_batch(&batch, &essays, config)?;

        let n_tokens: usize = batch.rollouts.iter().map(|r| r.len()).sum();
        let mut record = UpdateRecord {
            update,
            mean_shaped: [0, 1].map(|k| {
                batch.rollouts.iter().flat_map(|r| r.shaped[k].iter()).sum::<f64>() / n_tokens as f64
            }),
            mean_r_q: batch.bundle.r_q.iter().sum::<f64>() / batch.bundle.r_q.len() as f64,
            r_m: batch.bundle.r_m,
            q_b: batch.bundle.q_b,
            mean_kl: batch.rollouts.iter().flat_map(|r| r.kl_terms()).sum::<f64>() / n_tokens as f64,
            parse_failure_rate: batch.rollouts.iter().filter(|r| r.parsed.is_err()).count() as f64
                / batch.rollouts.len() as f64,
            w_q: 0.0,
            w_m: 0.0,
            loss_q: plan.use_q.then_some(0.0),
            loss_m: plan.use_m.then_some(0.0),
            loss_total: 0.0,
            grad_norm: 0.0,
            clip_fraction: 0.0,
            skipped_sequences: 0,
            nonfinite: false,
            weight_alarm: false,
        };
        let mut clipped = 0usize;
        for _ in 0..config.ppo_epochs {
            let w = weights.normalized();
            let (loss, grads) = batch_loss(&policy, &seqs, &plan, w, &coef, task.vocab.bos())?;
            record.skipped_sequences += loss.skipped;
            if !loss.total.is_finite() || !grads.iter().all(Matrix::is_finite) {
                record.nonfinite = true;
                break;
            }
            let lq = loss.channels[0].map(|c| c.total());
            let lm = loss.channels[1].map(|c| c.total());
            for (slot, v) in [(&mut record.loss_q, lq), (&mut record.loss_m, lm)] {
                if let (Some(s), Some(v)) = (slot.as_mut(), v) {
                    *s += v / config.ppo_epochs as f64;
                }
            }
            clipped += loss.channels.iter().flatten().map(|c| c.clipped).sum::<usize>();
            record.loss_total += loss.total / config.ppo_epochs as f64;
            record.grad_norm = opt.step(policy.store_mut().tensors_mut(), &grads);
            if weights.learned && plan.use_q && plan.use_m {
                let g = weights.raw_gradient(lq.unwrap_or(0.0), lm.unwrap_or(0.0));
                let mut raw = [Matrix::from_vec(1, 2, weights.raw.to_vec())];
                weight_opt.step(&mut raw, &[Matrix::from_vec(1, 2, g.to_vec())]);
                weights.raw = [raw[0].data[0], raw[0].data[1]];
            }
        }
        let active = usize::from(plan.use_q) + usize::from(plan.use_m);
        record.clip_fraction = clipped as f64 / (n_tokens * active * config.ppo_epochs) as f64;
        let [wq, wm] = weights.normalized();
        record.w_q = wq;
        record.w_m = wm;
        if weights.learned && !(wq > WEIGHT_ALARM.0 && wq < WEIGHT_ALARM.1) {
            record.weight_alarm = true;
            log::warn!("update {update}: loss weights ({wq:.4}, {wm:.4}) left ({}, {})", WEIGHT_ALARM.0, WEIGHT_ALARM.1);
        }
        if record.nonfinite || !policy.store().is_finite() {
            record.nonfinite = true;
            nonfinite_run += 1;
            policy = last_good.clone();
            log::warn!("update {update}: non-finite loss, parameters restored");
        } else {
            nonfinite_run = 0;
            last_good.clone_from(&policy);
        }
        log::debug!(
            "update {update}: r_q {:.4} r_m {:.4} kl {:.5} pfr {:.2} w ({wq:.3}, {wm:.3})",
            record.mean_r_q,
            record.r_m,
            record.mean_kl,
            record.parse_failure_rate
        );
        log.records.push(record);
        if nonfinite_run > config.nonfinite_patience {
            log.aborted = Some(format!("{nonfinite_run} consecutive non-finite updates at update {update}"));
            break;
        }
    }
    Ok(RlOutcome { policy: last_good, weights, log })
}
