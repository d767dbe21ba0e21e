//! Closed token vocabulary shared by the essay encoder and the score decoder.
//!
//! Layout (ids dense from 0, deterministic for a given schema and body size):
//! specials (`<pad>`, `<bos>`, `<eos>`, `nan`), scoring-prefix words, one
//! token per prompt, one per trait, one per integer score from 0 to the
//! schema maximum, then the essay body tokens `b0 .. b{n-1}`. The first
//! quarter of the body tokens are the quality markers used by the synthetic
//! generator.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Schema, TraitId};
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const NAN: &str = "nan";

/// Words of the scoring prefix; the prompt token follows, then `:`.
pub const PREFIX_WORDS: [&str; 6] = ["score", "the", "essay", "of", "the", "prompt"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    score_base: u32,
    max_score: i64,
    body_base: u32,
    body_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    score_base: u32,
    max_score: i64,
    body_base: u32,
    body_size: usize,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens: r.tokens,
            index,
            score_base: r.score_base,
            max_score: r.max_score,
            body_base: r.body_base,
            body_size: r.body_size,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            score_base: v.score_base,
            max_score: v.max_score,
            body_base: v.body_base,
            body_size: v.body_size,
        }
    }
}

pub fn prompt_token(prompt_id: u32) -> String {
    format!("<p{prompt_id}>")
}

pub fn body_token(i: usize) -> String {
    format!("b{i}")
}

/// Builds the vocabulary for a schema and essay-body vocabulary size.
pub fn build_vocab(schema: &Schema, body_size: usize) -> Vocabulary {
    let mut tokens: Vec<String> = vec![PAD.into(), BOS.into(), EOS.into(), NAN.into()];
    let push = |tokens: &mut Vec<String>, t: String| {
        if !tokens.contains(&t) {
            tokens.push(t);
        }
    };
    for w in PREFIX_WORDS.iter().chain([":"].iter()) {
        push(&mut tokens, w.to_string());
    }
    for p in schema.prompts() {
        push(&mut tokens, prompt_token(p.prompt_id));
    }
    for t in schema.traits() {
        push(&mut tokens, t.as_str().to_string());
    }
    let max_score = schema.max_score().max(0);
    let score_base = tokens.len() as u32;
    for s in 0..=max_score {
        tokens.push(s.to_string());
    }
    let body_base = tokens.len() as u32;
    for i in 0..body_size {
        tokens.push(body_token(i));
    }
    Vocabulary::from(VocabRepr {
        tokens,
        score_base,
        max_score,
        body_base,
        body_size,
    })
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn check(&self, id: u32) -> Result<()> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::UnknownToken(id))
        }
    }

    pub fn pad(&self) -> u32 {
        0
    }

    pub fn bos(&self) -> u32 {
        1
    }

    pub fn eos(&self) -> u32 {
        2
    }

    pub fn nan(&self) -> u32 {
        3
    }

    pub fn trait_token(&self, t: &TraitId) -> Option<u32> {
        self.id(t.as_str())
    }

    pub fn score_token(&self, score: i64) -> Option<u32> {
        (0..=self.max_score)
            .contains(&score)
            .then(|| self.score_base + score as u32)
    }

    /// Integer value of a score token, if `id` is one.
    pub fn score_value(&self, id: u32) -> Option<i64> {
        (id >= self.score_base && (id - self.score_base) as i64 <= self.max_score)
            .then(|| (id - self.score_base) as i64)
    }

    pub fn body_size(&self) -> usize {
        self.body_size
    }

    pub fn body(&self, i: usize) -> u32 {
        assert!(i < self.body_size, "body token {i} out of range");
        self.body_base + i as u32
    }

    pub fn marker_count(&self) -> usize {
        (self.body_size / 4).max(1)
    }

    /// Whether `id` is one of the designated quality-marker body tokens.
    pub fn is_marker(&self, id: u32) -> bool {
        id >= self.body_base && ((id - self.body_base) as usize) < self.marker_count()
    }

    pub fn is_body(&self, id: u32) -> bool {
        id >= self.body_base && ((id - self.body_base) as usize) < self.body_size
    }

    /// Scoring prefix for a prompt: `score the essay of the prompt <pN> :`.
    pub fn prefix(&self, prompt_id: u32) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(PREFIX_WORDS.len() + 2);
        for w in PREFIX_WORDS {
            out.push(self.id(w).expect("prefix words are in every vocabulary"));
        }
        out.push(
            self.id(&prompt_token(prompt_id))
                .ok_or_else(|| Error::Validation(format!("prompt {prompt_id} not in vocabulary")))?,
        );
        out.push(self.id(":").expect("prefix separator"));
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
