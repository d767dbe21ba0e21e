use serde::{Deserialize, Serialize};

use super::config::{TrainerConfig, WeightMode};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Q,
    M,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Q, Channel::M];

    /// Column of the value head and slot in per-channel arrays.
    pub fn index(self) -> usize {
        match self {
            Channel::Q => 0,
            Channel::M => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub c1: f64,
    pub c2: f64,
}

impl From<&TrainerConfig> for LossCoefficients {
    fn from(c: &TrainerConfig) -> Self {
        LossCoefficients { clip_epsilon: c.clip_epsilon, c1: c.c1, c2: c.c2 }
    }
}

/// Contributions of one sequence to a channel loss, each already divided
/// by the batch token count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelTerms {
    /// `−Σ min(ρÂ, clip(ρ)Â) / N`.
    pub surrogate: f64,
    /// `c1 · Σ (V − R)² / N`.
    pub value: f64,
    /// `−c2 · Σ H / N`.
    pub entropy: f64,
    pub clipped: usize,
}

impl ChannelTerms {
    pub fn total(&self) -> f64 {
        self.surrogate + self.value + self.entropy
    }

    pub fn accumulate(&mut self, o: &ChannelTerms) {
        self.surrogate += o.surrogate;
        self.value += o.value;
        self.entropy += o.entropy;
        self.clipped += o.clipped;
    }
}

/// Clipped PPO loss of one channel over one sequence, with gradients with
/// respect to the fresh logits and the value-head outputs.
///
/// `logits` and `values` hold one row per generated token; `norm` is the
/// token count of the whole batch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_channel_loss(
    logits: &Matrix,
    values: &Matrix,
    tokens: &[u32],
    old_logprobs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    channel: Channel,
    coef: &LossCoefficients,
    norm: f64,
) -> Result<(ChannelTerms, Matrix, Matrix)> {
    let t_len = tokens.len();
    if logits.rows != t_len || values.rows != t_len || old_logprobs.len() != t_len
        || advantages.len() != t_len || returns.len() != t_len
    {
        return Err(Error::Internal("channel loss inputs have mismatched lengths".into()));
    }
    let k = channel.index();
    let mut terms = ChannelTerms::default();
    let mut dlogits = Matrix::zeros(logits.rows, logits.cols);
    let mut dvalues = Matrix::zeros(values.rows, values.cols);
    for t in 0..t_len {
        let lp = log_softmax(logits.row(t));
        let a = tokens[t] as usize;
        let ratio = (lp[a] - old_logprobs[t]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!("probability ratio at token {t}")));
        }
        let adv = advantages[t];
        let clipped_ratio = ratio.clamp(1.0 - coef.clip_epsilon, 1.0 + coef.clip_epsilon);
        terms.surrogate -= (ratio * adv).min(clipped_ratio * adv) / norm;
        let inactive = (adv > 0.0 && ratio > 1.0 + coef.clip_epsilon) || (adv < 0.0 && ratio < 1.0 - coef.clip_epsilon);
        let row = dlogits.row_mut(t);
        if inactive {
            terms.clipped += 1;
        } else {
            // d(−ρÂ)/dz = −ρÂ (onehot − p)
            let g = -ratio * adv / norm;
            for (j, d) in row.iter_mut().enumerate() {
                *d -= g * lp[j].exp();
            }
            row[a] += g;
        }
        let entropy: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        terms.entropy -= coef.c2 * entropy / norm;
        // d(−c2 H)/dz_j = c2 p_j (log p_j + H)
        for (j, d) in row.iter_mut().enumerate() {
            *d += coef.c2 * lp[j].exp() * (lp[j] + entropy) / norm;
        }
        let diff = values.get(t, k) - returns[t];
        terms.value += coef.c1 * diff * diff / norm;
        dvalues.set(t, k, 2.0 * coef.c1 * diff / norm);
    }
    Ok((terms, dlogits, dvalues))
}

/// Normalized channel weights, either trained through a softmax over raw
/// parameters or held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub raw: [f64; 2],
    pub learned: bool,
    fixed: [f64; 2],
}

impl LossWeights {
    pub fn new(mode: WeightMode) -> Self {
        match mode {
            WeightMode::Learned { init_raw } => LossWeights { raw: init_raw, learned: true, fixed: [0.0; 2] },
            WeightMode::Fixed { w_q, w_m } => LossWeights { raw: [0.0; 2], learned: false, fixed: [w_q, w_m] },
        }
    }

    /// `(w_Q, w_M)`.
    pub fn normalized(&self) -> [f64; 2] {
        if !self.learned {
            return self.fixed;
        }
        let m = self.raw[0].max(self.raw[1]);
        let e = [(self.raw[0] - m).exp(), (self.raw[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    /// Gradient of `w_Q·L_Q + w_M·L_M` with respect to the raw weights.
    pub fn raw_gradient(&self, loss_q: f64, loss_m: f64) -> [f64; 2] {
        if !self.learned {
            return [0.0; 2];
        }
        let [wq, wm] = self.normalized();
        let g = wq * wm * (loss_q - loss_m);
        [g, -g]
    }
}

/// `w_Q·loss_Q + w_M·loss_M`.
pub fn combine_losses(loss_q: f64, loss_m: f64, weights: &LossWeights) -> f64 {
    let [wq, wm] = weights.normalized();
    wq * loss_q + wm * loss_m
}
