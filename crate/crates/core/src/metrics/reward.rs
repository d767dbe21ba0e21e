//! Scoring-aware rewards over a batch of generated score vectors.
//!
//! NaN gold traits are excluded everywhere. A prediction that failed to
//! parse (or lacks a gold-scored trait) is replaced, trait by trait, with
//! the endpoint of that trait's range farthest from the gold score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kappa::{qwk, Kappa, RatingPairSet};
use crate::corpus::{PromptSpec, ScoreRange, TraitId, TraitScoreVector};
use crate::error::{Error, Result};

/// One sample of a scored batch. `pred = None` marks a parse failure.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub prompt: &'a PromptSpec,
    pub gold: &'a TraitScoreVector,
    pub pred: Option<&'a TraitScoreVector>,
}

/// A resolved `(trait, gold, prediction)` triple with the trait's own range.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPair {
    pub trait_id: TraitId,
    pub gold: i64,
    pub pred: i64,
    pub range: ScoreRange,
}

impl<'a> BatchItem<'a> {
    pub fn new(prompt: &'a PromptSpec, gold: &'a TraitScoreVector, pred: Option<&'a TraitScoreVector>) -> Self {
        BatchItem { prompt, gold, pred }
    }

    pub fn resolved_pairs(&self) -> Vec<ResolvedPair> {
        self.prompt
            .traits
            .iter()
            .filter_map(|t| {
                let gold = self.gold.get(t)?;
                let range = self.prompt.range(t)?;
                let pred = self
                    .pred
                    .and_then(|p| p.get(t))
                    .filter(|v| range.contains(*v))
                    .unwrap_or_else(|| range.worst_case(gold));
                Some(ResolvedPair { trait_id: t.clone(), gold, pred, range })
            })
            .collect()
    }
}

/// Rating scale used for the within-sample trait kappa.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TraitKappaScale {
    /// Raw scores on the union of the prompt's trait ranges.
    #[default]
    Pooled,
    /// Each trait rescaled linearly onto `0..levels-1` before pooling.
    Rescaled { levels: usize },
}

/// Union of the score ranges of every prompt in the batch.
pub fn batch_range(items: &[BatchItem]) -> Option<ScoreRange> {
    items
        .iter()
        .map(|it| it.prompt.pooled_range())
        .reduce(|a, b| a.union(&b))
}

/// Batch-wise kappa over every non-NaN trait pair in the batch.
pub fn batch_qwk(items: &[BatchItem]) -> Kappa {
    match batch_range(items) {
        Some(r) => batch_qwk_in(items, r),
        None => Kappa::undefined(),
    }
}

pub fn batch_qwk_in(items: &[BatchItem], range: ScoreRange) -> Kappa {
    let pairs: Vec<(i64, i64)> = items
        .iter()
        .flat_map(|it| it.resolved_pairs())
        .map(|p| (p.gold, p.pred))
        .collect();
    match RatingPairSet::from_pairs(pairs, range) {
        Ok(set) => qwk(&set),
        Err(_) => Kappa::undefined(),
    }
}

/// Sample-level kappa over the traits of one essay.
pub fn trait_qwk(item: &BatchItem, scale: TraitKappaScale) -> Kappa {
    let pairs = item.resolved_pairs();
    let set = match scale {
        TraitKappaScale::Pooled => RatingPairSet::from_pairs(
            pairs.iter().map(|p| (p.gold, p.pred)),
            item.prompt.pooled_range(),
        ),
        TraitKappaScale::Rescaled { levels } => {
            let top = levels.max(2) as i64 - 1;
            let rescale = |v: i64, r: ScoreRange| ((v - r.lo) as f64 / r.span() * top as f64).round() as i64;
            RatingPairSet::from_pairs(
                pairs.iter().map(|p| (rescale(p.gold, p.range), rescale(p.pred, p.range))),
                ScoreRange::new(0, top),
            )
        }
    };
    match set {
        Ok(set) => qwk(&set),
        Err(_) => Kappa::undefined(),
    }
}

/// Negated mean over traits of the per-trait RMSE across the batch.
pub fn mse_reward(items: &[BatchItem]) -> (f64, bool) {
    let mut per_trait: BTreeMap<TraitId, (f64, usize)> = BTreeMap::new();
    for p in items.iter().flat_map(|it| it.resolved_pairs()) {
        let e = per_trait.entry(p.trait_id).or_insert((0.0, 0));
        let d = (p.gold - p.pred) as f64;
        e.0 += d * d;
        e.1 += 1;
    }
    if per_trait.is_empty() {
        return (0.0, true);
    }
    let m = per_trait.len() as f64;
    let total: f64 = per_trait.values().map(|(sq, n)| (sq / *n as f64).sqrt()).sum();
    (-total / m, false)
}

/// Per-sample rewards and their diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_q: Vec<f64>,
    /// Batch scalar, shared by every sample.
    pub r_m: f64,
    pub q_b: f64,
    pub q_t: Vec<f64>,
    pub lambda: f64,
    pub q_b_degenerate: bool,
    pub q_t_degenerate: Vec<bool>,
    pub r_m_degenerate: bool,
}

/// `r_Q = λ·Q_B + (1 − λ)·Q_T` per sample.
pub fn bidirectional_q_reward(
    items: &[BatchItem],
    lambda: f64,
    scale: TraitKappaScale,
) -> Result<(Vec<f64>, Kappa, Vec<Kappa>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    let q_b = batch_qwk(items);
    let q_t: Vec<Kappa> = items.iter().map(|it| trait_qwk(it, scale)).collect();
    let r_q = q_t
        .iter()
        .map(|t| lambda * q_b.value + (1.0 - lambda) * t.value)
        .collect();
    Ok((r_q, q_b, q_t))
}

pub fn reward_bundle(items: &[BatchItem], lambda: f64, scale: TraitKappaScale) -> Result<RewardBundle> {
    if items.is_empty() {
        return Err(Error::Empty("reward batch".into()));
    }
    let (r_q, q_b, q_t) = bidirectional_q_reward(items, lambda, scale)?;
    let (r_m, r_m_degenerate) = mse_reward(items);
    Ok(RewardBundle {
        r_q,
        r_m,
        q_b: q_b.value,
        q_t: q_t.iter().map(|k| k.value).collect(),
        lambda,
        q_b_degenerate: q_b.degenerate,
        q_t_degenerate: q_t.iter().map(|k| k.degenerate).collect(),
        r_m_degenerate,
    })
}
