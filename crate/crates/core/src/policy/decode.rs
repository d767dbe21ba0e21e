//! Autoregressive generation and teacher-forced token log-probabilities.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::PolicyParams;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, Graph};
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Sampled { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Generated tokens, `<eos>` included when emitted.
    pub tokens: Vec<u32>,
    /// Log-probability of each generated token under the untempered policy.
    pub logprobs: Vec<f64>,
    /// Value estimates `[V_Q, V_M]` at each generated position.
    pub values: Vec<[f64; 2]>,
    /// False when `max_len` was reached before `<eos>`.
    pub terminated: bool,
}

fn sample(logp: &[f64], mode: DecodeMode, rng: &mut impl Rng) -> Result<usize> {
    match mode {
        DecodeMode::Greedy => Ok(logp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0),
        DecodeMode::Sampled { temperature } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
            }
            let scaled: Vec<f64> = logp.iter().map(|l| l / temperature).collect();
            let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::NonFinite(format!("sampling weights: {e}")))?;
            Ok(dist.sample(rng))
        }
    }
}

/// Generates a score sequence for an encoded essay.
pub fn generate(
    params: &PolicyParams,
    essay: &[u32],
    vocab: &Vocabulary,
    mode: DecodeMode,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Generation> {
    let max_len = max_len.min(params.config().max_target_len);
    let mut cache = params.start_decoding(essay)?;
    let mut input = vocab.bos();
    let mut out = Generation { tokens: Vec::new(), logprobs: Vec::new(), values: Vec::new(), terminated: false };
    while out.tokens.len() < max_len {
        let (logits, v) = params.decode_step(&mut cache, input)?;
        if !logits.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        let logp = log_softmax(&logits);
        let tok = sample(&logp, mode, rng)?;
        out.tokens.push(tok as u32);
        out.logprobs.push(logp[tok]);
        out.values.push(v);
        if tok as u32 == vocab.eos() {
            out.terminated = true;
            break;
        }
        input = tok as u32;
    }
    Ok(out)
}

/// Truncates `target` after its first `<eos>`.
pub fn truncate_at_eos(target: &[u32], eos: u32) -> &[u32] {
    match target.iter().position(|&t| t == eos) {
        Some(i) => &target[..=i],
        None => target,
    }
}

/// Teacher-forced log π(y_t | essay, y_<t) for every token of `target` up to
/// and including the first `<eos>`.
pub fn token_logprobs(params: &PolicyParams, essay: &[u32], target: &[u32], vocab: &Vocabulary) -> Result<Vec<f64>> {
    let target = truncate_at_eos(target, vocab.eos());
    if target.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= params.vocab_size()) {
        return Err(Error::UnknownToken(t));
    }
    let mut g = Graph::new(params.store());
    let f = params.forward(&mut g, essay, target, vocab.bos())?;
    let logits = g.value(f.logits);
    Ok(target
        .iter()
        .enumerate()
        .map(|(i, &t)| log_softmax(logits.row(i))[t as usize])
        .collect())
}
