//! Target-sequence format: `trait score trait score ... <eos>`.
//!
//! Traits appear in prediction order. Traits the prompt does not evaluate
//! carry the `nan` token. Parsing is strict: any token that does not fit the
//! grammar produces a [`ParseFailure`] value.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{PromptSpec, TraitId, TraitScoreVector};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub fn serialize_targets(
    gold: &TraitScoreVector,
    order: &[TraitId],
    vocab: &Vocabulary,
) -> Result<Vec<u32>> {
    if let Some((t, _)) = gold.iter().find(|(t, _)| !order.contains(t)) {
        return Err(Error::Internal(format!("trait {t} missing from prediction order")));
    }
    let mut out = Vec::with_capacity(order.len() * 2 + 1);
    for t in order {
        out.push(
            vocab
                .trait_token(t)
                .ok_or_else(|| Error::Internal(format!("trait {t} not in vocabulary")))?,
        );
        out.push(match gold.get(t) {
            Some(s) => vocab
                .score_token(s)
                .ok_or_else(|| Error::Internal(format!("score {s} not in vocabulary")))?,
            None => vocab.nan(),
        });
    }
    out.push(vocab.eos());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseFailureKind {
    /// The sequence ended before every trait was read.
    Truncated,
    WrongTraitToken { expected: TraitId, found: u32 },
    /// `nan` or a non-score token where the prompt requires a score.
    MissingScore { trait_id: TraitId, found: u32 },
    OutOfRange { trait_id: TraitId, value: i64 },
    /// A score or stray token where `nan` is required.
    ExpectedNan { trait_id: TraitId, found: u32 },
    MissingEos { found: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    /// Index of the offending token (sequence length on truncation).
    pub position: usize,
    /// Traits resolved before the failure.
    pub parsed: TraitScoreVector,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at token {}", self.kind, self.position)
    }
}

/// Decodes a generated sequence into per-trait scores for `prompt`.
pub fn parse_scores(
    sequence: &[u32],
    prompt: &PromptSpec,
    order: &[TraitId],
    vocab: &Vocabulary,
) -> std::result::Result<TraitScoreVector, ParseFailure> {
    let mut parsed = TraitScoreVector::new();
    let mut pos = 0;
    macro_rules! fail {
        ($kind:expr, $at:expr) => {
            return Err(ParseFailure { kind: $kind, position: $at, parsed })
        };
    }
    for t in order {
        let Some(&tok) = sequence.get(pos) else {
            fail!(ParseFailureKind::Truncated, sequence.len())
        };
        if Some(tok) != vocab.trait_token(t) {
            fail!(ParseFailureKind::WrongTraitToken { expected: t.clone(), found: tok }, pos)
        }
        pos += 1;
        let Some(&tok) = sequence.get(pos) else {
            fail!(ParseFailureKind::Truncated, sequence.len())
        };
        match prompt.range(t) {
            Some(range) => match vocab.score_value(tok) {
                Some(v) if range.contains(v) => parsed.set(t.clone(), Some(v)),
                Some(v) => fail!(ParseFailureKind::OutOfRange { trait_id: t.clone(), value: v }, pos),
                None => fail!(ParseFailureKind::MissingScore { trait_id: t.clone(), found: tok }, pos),
            },
            None if tok == vocab.nan() => parsed.set(t.clone(), None),
            None => fail!(ParseFailureKind::ExpectedNan { trait_id: t.clone(), found: tok }, pos),
        }
        pos += 1;
    }
    match sequence.get(pos) {
        None => fail!(ParseFailureKind::Truncated, sequence.len()),
        Some(&tok) if tok != vocab.eos() => fail!(ParseFailureKind::MissingEos { found: tok }, pos),
        Some(_) => Ok(parsed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_prompt_schema, trait_prediction_order, Schema};
    use crate::vocab::build_vocab;
    use proptest::prelude::*;

    fn p3_gold(schema: &Schema) -> TraitScoreVector {
        let p3 = schema.prompt(3).unwrap();
        TraitScoreVector::for_prompt(schema, p3, |t, _| match t.as_str() {
            "over" => 2,
            "cont" => 1,
            "pa" => 2,
            "lang" => 3,
            "nar" => 2,
            _ => unreachable!(),
        })
    }

    #[test]
    fn p3_serialization_layout() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let order = trait_prediction_order(&schema);
        let seq = serialize_targets(&p3_gold(&schema), &order, &vocab).unwrap();
        assert_eq!(
            vocab.decode(&seq),
            "voice nan style nan sf nan wc nan conv nan org nan nar 2 lang 3 pa 2 cont 1 over 2 <eos>"
        );
    }

    #[test]
    fn empty_order_is_just_eos() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let seq = serialize_targets(&TraitScoreVector::new(), &[], &vocab).unwrap();
        assert_eq!(seq, vec![vocab.eos()]);
    }

    #[test]
    fn trait_outside_order_is_internal_error() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let order = vec![TraitId::overall()];
        assert!(matches!(
            serialize_targets(&p3_gold(&schema), &order, &vocab),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn truncation_and_out_of_range() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let order = trait_prediction_order(&schema);
        let p3 = schema.prompt(3).unwrap();
        let seq = serialize_targets(&p3_gold(&schema), &order, &vocab).unwrap();
        let cut = &seq[..seq.len() - 3];
        let f = parse_scores(cut, p3, &order, &vocab).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Truncated);
        assert_eq!(f.parsed.get(&TraitId::new("cont")), Some(1));
        assert!(!f.parsed.contains(&TraitId::overall()));

        let p5 = schema.prompt(5).unwrap();
        let gold5 = TraitScoreVector::for_prompt(&schema, p5, |_, _| 3);
        let mut seq5 = serialize_targets(&gold5, &order, &vocab).unwrap();
        let over_score = seq5.len() - 2;
        seq5[over_score] = vocab.score_token(7).unwrap();
        let f = parse_scores(&seq5, p5, &order, &vocab).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::OutOfRange { trait_id: TraitId::overall(), value: 7 });
    }

    #[test]
    fn every_single_token_corruption_is_flagged() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let order = trait_prediction_order(&schema);
        for prompt in schema.prompts() {
            let gold = TraitScoreVector::for_prompt(&schema, prompt, |_, r| r.hi);
            let seq = serialize_targets(&gold, &order, &vocab).unwrap();
            assert_eq!(parse_scores(&seq, prompt, &order, &vocab).unwrap(), gold);
            for pos in 0..seq.len() {
                for replacement in 0..vocab.len() as u32 {
                    if replacement == seq[pos] {
                        continue;
                    }
                    let mut bad = seq.clone();
                    bad[pos] = replacement;
                    let valid_alternative = pos % 2 == 1
                        && pos < seq.len() - 1
                        && prompt.range(&order[pos / 2]).is_some_and(|r| {
                            vocab.score_value(replacement).is_some_and(|v| r.contains(v))
                        });
                    let result = parse_scores(&bad, prompt, &order, &vocab);
                    if valid_alternative {
                        // a different in-range score is still a well-formed sequence
                        assert_ne!(result.unwrap(), gold);
                    } else {
                        let f = result.unwrap_err();
                        assert_eq!(f.position, pos, "P{} pos {pos} tok {replacement}", prompt.prompt_id);
                    }
                }
            }
        }
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let schema = load_prompt_schema();
        let vocab = build_vocab(&schema, 8);
        let order = trait_prediction_order(&schema);
        let gold = p3_gold(&schema);
        let mut seq = serialize_targets(&gold, &order, &vocab).unwrap();
        seq.extend([vocab.pad(); 4]);
        assert_eq!(parse_scores(&seq, schema.prompt(3).unwrap(), &order, &vocab).unwrap(), gold);
    }

    proptest! {
        #[test]
        fn round_trip_identity(prompt_idx in 0usize..8, picks in proptest::collection::vec(0.0f64..1.0, 11)) {
            let schema = load_prompt_schema();
            let vocab = build_vocab(&schema, 8);
            let order = trait_prediction_order(&schema);
            let prompt = &schema.prompts()[prompt_idx];
            let mut i = 0;
            let gold = TraitScoreVector::for_prompt(&schema, prompt, |_, r| {
                i += 1;
                r.lo + (picks[i - 1] * (r.len() as f64)).floor() as i64
            });
            let seq = serialize_targets(&gold, &order, &vocab).unwrap();
            prop_assert_eq!(parse_scores(&seq, prompt, &order, &vocab).unwrap(), gold);
        }
    }
}
