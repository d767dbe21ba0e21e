//! Scored-essay corpus: schema, synthetic generation, external ingestion,
//! target-sequence format and cross-validation folds.

mod folds;
mod format;
mod generate;
mod ingest;
mod schema;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use folds::{make_folds, split_hash, FoldSplit};
pub use format::{parse_scores, serialize_targets, ParseFailure, ParseFailureKind};
pub use generate::{generate_corpus, marker_fraction, CorpusConfig};
pub use ingest::{ingest_external_corpus, ingest_reader};
pub use schema::{
    load_prompt_schema, trait_prediction_order, trait_prediction_order_with, EssayType,
    PromptSpec, Schema, ScoreRange, TieBreak, TraitId,
};

use crate::error::{Error, Result};

/// Per-trait scores of one essay; `None` is the `nan` marker.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitScoreVector {
    scores: BTreeMap<TraitId, Option<i64>>,
}

impl TraitScoreVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// A vector with every schema trait present and `nan` where the prompt
    /// does not evaluate it.
    pub fn for_prompt(
        schema: &Schema,
        prompt: &PromptSpec,
        mut score: impl FnMut(&TraitId, ScoreRange) -> i64,
    ) -> Self {
        let mut v = Self::new();
        for t in schema.traits() {
            let s = prompt.range(&t).map(|r| score(&t, r));
            v.set(t, s);
        }
        v
    }

    pub fn set(&mut self, t: TraitId, score: Option<i64>) {
        self.scores.insert(t, score);
    }

    /// Score of `t`; `None` for `nan` or absent traits.
    pub fn get(&self, t: &TraitId) -> Option<i64> {
        self.scores.get(t).copied().flatten()
    }

    pub fn contains(&self, t: &TraitId) -> bool {
        self.scores.contains_key(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TraitId, Option<i64>)> {
        self.scores.iter().map(|(t, s)| (t, *s))
    }

    /// Traits carrying a numeric score.
    pub fn scored(&self) -> impl Iterator<Item = (&TraitId, i64)> {
        self.scores.iter().filter_map(|(t, s)| s.map(|s| (t, s)))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Checks scores against the owning prompt's ranges.
    pub fn validate(&self, prompt: &PromptSpec) -> Result<()> {
        for (t, s) in self.scored() {
            match prompt.range(t) {
                Some(r) if r.contains(s) => {}
                Some(r) => {
                    return Err(Error::Validation(format!(
                        "prompt {} trait {t} score {s} outside range {r}",
                        prompt.prompt_id
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "prompt {} does not evaluate trait {t} but a score {s} was given",
                        prompt.prompt_id
                    )))
                }
            }
        }
        Ok(())
    }
}

impl FromIterator<(TraitId, Option<i64>)> for TraitScoreVector {
    fn from_iter<I: IntoIterator<Item = (TraitId, Option<i64>)>>(iter: I) -> Self {
        TraitScoreVector {
            scores: iter.into_iter().collect(),
        }
    }
}

/// A tokenized essay with its gold trait scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: u64,
    pub prompt_id: u32,
    /// Scoring prefix followed by the essay body.
    pub tokens: Vec<u32>,
    pub gold: TraitScoreVector,
    /// Generator-internal quality in [0, 1].
    pub latent_quality: f64,
    pub fold: Option<usize>,
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write>(records: &[EssayRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EssayRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_vector_validation() {
        let schema = load_prompt_schema();
        let p3 = schema.prompt(3).unwrap();
        let mut v = TraitScoreVector::for_prompt(&schema, p3, |_, r| r.lo);
        assert!(v.validate(p3).is_ok());
        assert_eq!(v.len(), schema.traits().len());
        assert_eq!(v.get(&TraitId::new("voice")), None);
        v.set(TraitId::new("pa"), Some(9));
        assert!(v.validate(p3).is_err());
        v.set(TraitId::new("pa"), Some(2));
        v.set(TraitId::new("voice"), Some(5));
        assert!(v.validate(p3).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let schema = load_prompt_schema();
        let cfg = CorpusConfig {
            essays_per_prompt: 10,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&schema, &cfg).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&corpus, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
    }
}
