use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_scores, EssayRecord, ParseFailure, TraitScoreVector};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_report, BatchItem, EvaluationReport};
use crate::policy::{generate, DecodeMode, PolicyParams};
use crate::ppo::ScoringTask;

/// Greedy decode of one essay, parsed against its prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub essay_id: u64,
    pub tokens: Vec<u32>,
    pub parsed: std::result::Result<TraitScoreVector, ParseFailure>,
}

pub fn predict(params: &PolicyParams, essays: &[&EssayRecord], task: ScoringTask) -> Result<Vec<Prediction>> {
    // greedy decoding never draws from the generator
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    essays
        .iter()
        .map(|e| {
            let prompt = task
                .schema
                .prompt(e.prompt_id)
                .ok_or_else(|| Error::Validation(format!("unknown prompt {}", e.prompt_id)))?;
            let out = generate(params, &e.tokens, task.vocab, DecodeMode::Greedy, task.target_len(), &mut unused)?;
            let parsed = parse_scores(&out.tokens, prompt, task.order, task.vocab);
            Ok(Prediction { essay_id: e.essay_id, tokens: out.tokens, parsed })
        })
        .collect()
}

/// Scores predictions against gold with worst-case substitution for
/// parse failures.
pub fn report_predictions(
    model: &str,
    essays: &[&EssayRecord],
    predictions: &[Prediction],
    task: ScoringTask,
) -> Result<EvaluationReport> {
    if essays.len() != predictions.len() {
        return Err(Error::Internal("prediction count differs from essay count".into()));
    }
    let items: Vec<BatchItem> = essays
        .iter()
        .zip(predictions)
        .map(|(e, p)| {
            let prompt = task.schema.prompt(e.prompt_id).expect("checked during prediction");
            BatchItem::new(prompt, &e.gold, p.parsed.as_ref().ok())
        })
        .collect();
    evaluate_report(model, &items, task.schema)
}

/// Greedy evaluation of `params` on `essays`.
pub fn evaluate_policy(model: &str, params: &PolicyParams, essays: &[&EssayRecord], task: ScoringTask) -> Result<EvaluationReport> {
    let preds = predict(params, essays, task)?;
    report_predictions(model, essays, &preds, task)
}

/// Report of the gold scores against themselves.
pub fn evaluate_gold(model: &str, essays: &[&EssayRecord], task: ScoringTask) -> Result<EvaluationReport> {
    let items: Vec<BatchItem> = essays
        .iter()
        .map(|e| {
            let prompt = task
                .schema
                .prompt(e.prompt_id)
                .ok_or_else(|| Error::Validation(format!("unknown prompt {}", e.prompt_id)))?;
            Ok(BatchItem::new(prompt, &e.gold, Some(&e.gold)))
        })
        .collect::<Result<_>>()?;
    evaluate_report(model, &items, task.schema)
}
