//! Supervised (teacher-forced) pretraining of the policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::PolicyParams;
use crate::corpus::{serialize_targets, EssayRecord, TraitId};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, Adam, Graph, Matrix};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    /// Steps between dev evaluations; `None` evaluates once per epoch.
    pub eval_every: Option<usize>,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 15,
            batch_size: 4,
            learning_rate: 1e-3,
            patience: 2,
            eval_every: None,
            max_grad_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.eval_every == Some(0) {
            return Err(Error::Config("pretrain batch size, learning rate and eval interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    /// Mean token cross-entropy over the steps since the previous point.
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainCurve {
    pub initial_dev_loss: f64,
    pub points: Vec<CurvePoint>,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
}

/// Summed token cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, targets: &[u32]) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let lp = log_softmax(logits.row(i));
        loss -= lp[t as usize];
        for (g, l) in grad.row_mut(i).iter_mut().zip(&lp) {
            *g = l.exp();
        }
        grad.row_mut(i)[t as usize] -= 1.0;
    }
    (loss, grad)
}

struct Example<'a> {
    essay: &'a [u32],
    target: Vec<u32>,
}

fn examples<'a>(records: &[&'a EssayRecord], order: &[TraitId], vocab: &Vocabulary) -> Result<Vec<Example<'a>>> {
    records
        .iter()
        .map(|r| Ok(Example { essay: &r.tokens, target: serialize_targets(&r.gold, order, vocab)? }))
        .collect()
}

fn mean_loss(params: &PolicyParams, data: &[Example], vocab: &Vocabulary) -> Result<f64> {
    let (mut loss, mut tokens) = (0.0, 0usize);
    for ex in data {
        let mut g = Graph::new(params.store());
        let f = params.forward(&mut g, ex.essay, &ex.target, vocab.bos())?;
        loss += cross_entropy(g.value(f.logits), &ex.target).0;
        tokens += ex.target.len();
    }
    if tokens == 0 {
        return Err(Error::Empty("evaluation set".into()));
    }
    Ok(loss / tokens as f64)
}

/// Trains on `train` with token cross-entropy and returns the parameters
/// with the lowest dev loss seen, along with the learning curve.
pub fn supervised_train(
    init: PolicyParams,
    train: &[&EssayRecord],
    dev: &[&EssayRecord],
    order: &[TraitId],
    vocab: &Vocabulary,
    config: &PretrainConfig,
) -> Result<(PolicyParams, PretrainCurve)> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Empty("pretraining split".into()));
    }
    let train = examples(train, order, vocab)?;
    let dev = examples(dev, order, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut opt = Adam::new(config.learning_rate).with_clip(config.max_grad_norm);
    let initial = mean_loss(&params, &dev, vocab)?;
    let mut curve = PretrainCurve {
        initial_dev_loss: initial,
        points: Vec::new(),
        best_step: 0,
        best_dev_loss: initial,
        stopped_early: false,
    };
    let mut best = params.clone();
    let mut stale = 0;
    let (mut step, mut acc_loss, mut acc_tokens) = (0usize, 0.0, 0usize);
    let mut order_idx: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        order_idx.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order_idx.chunks(config.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let n_tokens: usize = batch.iter().map(|&i| train[i].target.len()).sum();
            let mut grads = params.store().zeros_like();
            for &i in batch.iter() {
                let ex = &train[i];
                let mut g = Graph::new(params.store());
                let f = params.forward(&mut g, ex.essay, &ex.target, vocab.bos())?;
                let (loss, mut d) = cross_entropy(g.value(f.logits), &ex.target);
                d.scale_assign(1.0 / n_tokens as f64);
                g.backward(vec![(f.logits, d)], &mut grads);
                acc_loss += loss;
            }
            acc_tokens += n_tokens;
            if !acc_loss.is_finite() || !grads.iter().all(Matrix::is_finite) {
                return Err(Error::NonFinite(format!("pretraining loss at step {step}")));
            }
            opt.step(params.store_mut().tensors_mut(), &grads);
            step += 1;
            let due = match config.eval_every {
                Some(n) => step % n == 0,
                None => b + 1 == batches.len(),
            };
            if due {
                let dev_loss = mean_loss(&params, &dev, vocab)?;
                if !dev_loss.is_finite() {
                    return Err(Error::NonFinite(format!("dev loss at step {step}")));
                }
                curve.points.push(CurvePoint { step, epoch, train_loss: acc_loss / acc_tokens as f64, dev_loss });
                log::debug!("pretrain step {step} epoch {epoch} dev {dev_loss:.4}");
                (acc_loss, acc_tokens) = (0.0, 0);
                if dev_loss < curve.best_dev_loss {
                    curve.best_dev_loss = dev_loss;
                    curve.best_step = step;
                    best = params.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        curve.stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
    }
    Ok((best, curve))
}
