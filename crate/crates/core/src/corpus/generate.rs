//! Synthetic scored-essay generator.
//!
//! Each essay draws a latent quality `q ~ U(0, 1)`. Gold trait scores are
//! `clamp(round(lo + q·(hi − lo) + ε))` with `ε ~ N(0, (σ·(hi − lo))²)`.
//! Body tokens are quality markers with probability `0.05 + 0.9·q` and
//! fillers otherwise, so the marker fraction of the body (see
//! [`marker_fraction`]) is an unbiased, monotone readout of `q`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EssayRecord, Schema, ScoreRange, TraitScoreVector};
use crate::error::{Error, Result};
use crate::vocab::{build_vocab, Vocabulary};

const MARKER_FLOOR: f64 = 0.05;
const MARKER_SLOPE: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub essays_per_prompt: usize,
    /// Observation noise on gold scores, as a fraction of each trait's span.
    pub noise_sigma: f64,
    pub vocab_size_body: usize,
    pub body_length_range: (usize, usize),
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            essays_per_prompt: 120,
            noise_sigma: 0.05,
            vocab_size_body: 32,
            body_length_range: (16, 24),
            seed: 42,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.essays_per_prompt < 10 {
            return Err(Error::Config("essays_per_prompt must be at least 10".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        let (lo, hi) = self.body_length_range;
        if lo < 4 || hi < lo {
            return Err(Error::Config(format!("invalid body_length_range ({lo}, {hi})")));
        }
        if self.vocab_size_body < 2 {
            return Err(Error::Config("vocab_size_body must be at least 2".into()));
        }
        Ok(())
    }

    pub fn vocabulary(&self, schema: &Schema) -> Vocabulary {
        build_vocab(schema, self.vocab_size_body)
    }
}

/// Maps latent quality plus an absolute noise offset to an in-range score.
pub fn quality_to_score(q: f64, range: ScoreRange, noise: f64) -> i64 {
    let raw = range.lo as f64 + q * range.span() + noise;
    range.clamp(raw.round() as i64)
}

/// Fraction of body tokens that are quality markers.
pub fn marker_fraction(tokens: &[u32], vocab: &Vocabulary) -> f64 {
    let body: Vec<u32> = tokens.iter().copied().filter(|&t| vocab.is_body(t)).collect();
    if body.is_empty() {
        return 0.0;
    }
    body.iter().filter(|&&t| vocab.is_marker(t)).count() as f64 / body.len() as f64
}

pub fn generate_corpus(schema: &Schema, config: &CorpusConfig) -> Result<Vec<EssayRecord>> {
    config.validate()?;
    let vocab = config.vocabulary(schema);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let markers: Vec<u32> = (0..vocab.marker_count()).map(|i| vocab.body(i)).collect();
    let fillers: Vec<u32> = (vocab.marker_count()..vocab.body_size())
        .map(|i| vocab.body(i))
        .collect();
    let fillers = if fillers.is_empty() { markers.clone() } else { fillers };
    let (len_lo, len_hi) = config.body_length_range;

    let mut out = Vec::with_capacity(schema.prompts().len() * config.essays_per_prompt);
    let mut next_id = 0u64;
    for prompt in schema.prompts() {
        let prefix = vocab.prefix(prompt.prompt_id)?;
        for _ in 0..config.essays_per_prompt {
            let q: f64 = rng.random();
            let gold = TraitScoreVector::for_prompt(schema, prompt, |_, range| {
                let eps = config.noise_sigma * range.span() * unit.sample(&mut rng);
                quality_to_score(q, range, eps)
            });
            let len = rng.random_range(len_lo..=len_hi);
            let p_marker = MARKER_FLOOR + MARKER_SLOPE * q;
            let mut tokens = prefix.clone();
            for _ in 0..len {
                let pool = if rng.random::<f64>() < p_marker { &markers } else { &fillers };
                tokens.push(*pool.choose(&mut rng).expect("non-empty token pool"));
            }
            out.push(EssayRecord {
                essay_id: next_id,
                prompt_id: prompt.prompt_id,
                tokens,
                gold,
                latent_quality: q,
                fold: None,
            });
            next_id += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_prompt_schema, write_jsonl};
    use proptest::prelude::*;

    fn small(seed: u64, noise: f64) -> CorpusConfig {
        CorpusConfig {
            essays_per_prompt: 30,
            noise_sigma: noise,
            seed,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn noiseless_extremes_and_midpoint() {
        let r = ScoreRange::new(0, 4);
        assert_eq!(quality_to_score(1.0, r, 0.0), 4);
        assert_eq!(quality_to_score(0.5, r, 0.0), 2);
        assert_eq!(quality_to_score(0.0, r, 0.0), 0);
        assert_eq!(quality_to_score(1.0, r, 3.0), 4);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let schema = load_prompt_schema();
        let bytes = |c: &CorpusConfig| {
            let mut b = Vec::new();
            write_jsonl(&generate_corpus(&schema, c).unwrap(), &mut b).unwrap();
            b
        };
        assert_eq!(bytes(&small(7, 0.1)), bytes(&small(7, 0.1)));
        assert_ne!(bytes(&small(7, 0.1)), bytes(&small(8, 0.1)));
    }

    #[test]
    fn structure_and_prefix() {
        let schema = load_prompt_schema();
        let cfg = small(1, 0.05);
        let vocab = cfg.vocabulary(&schema);
        let corpus = generate_corpus(&schema, &cfg).unwrap();
        assert_eq!(corpus.len(), 8 * 30);
        for r in &corpus {
            let prefix = vocab.prefix(r.prompt_id).unwrap();
            assert!(r.tokens.starts_with(&prefix));
            let body = r.tokens.len() - prefix.len();
            assert!((16..=24).contains(&body));
            r.gold.validate(schema.prompt(r.prompt_id).unwrap()).unwrap();
        }
    }

    #[test]
    fn noiseless_scores_are_monotone_in_quality() {
        let schema = load_prompt_schema();
        let corpus = generate_corpus(&schema, &small(3, 0.0)).unwrap();
        for p in schema.prompts() {
            let mut slice: Vec<_> = corpus.iter().filter(|r| r.prompt_id == p.prompt_id).collect();
            slice.sort_by(|a, b| a.latent_quality.total_cmp(&b.latent_quality));
            for t in &p.traits {
                let scores: Vec<i64> = slice.iter().map(|r| r.gold.get(t).unwrap()).collect();
                assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{t} not monotone in P{}", p.prompt_id);
                assert!(scores.first() < scores.last());
            }
        }
    }

    #[test]
    fn marker_fraction_tracks_quality() {
        let schema = load_prompt_schema();
        let cfg = CorpusConfig { essays_per_prompt: 200, ..small(5, 0.0) };
        let vocab = cfg.vocabulary(&schema);
        let corpus = generate_corpus(&schema, &cfg).unwrap();
        let (lo, hi): (Vec<_>, Vec<_>) = corpus.iter().partition(|r| r.latent_quality < 0.5);
        let mean = |v: &[&EssayRecord]| {
            v.iter().map(|r| marker_fraction(&r.tokens, &vocab)).sum::<f64>() / v.len() as f64
        };
        assert!(mean(&hi) > mean(&lo) + 0.3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let schema = load_prompt_schema();
        for cfg in [
            CorpusConfig { essays_per_prompt: 9, ..CorpusConfig::default() },
            CorpusConfig { noise_sigma: -0.1, ..CorpusConfig::default() },
            CorpusConfig { body_length_range: (3, 10), ..CorpusConfig::default() },
            CorpusConfig { body_length_range: (10, 5), ..CorpusConfig::default() },
        ] {
            assert!(matches!(generate_corpus(&schema, &cfg), Err(Error::Config(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gold_scores_always_in_range(seed in any::<u64>(), noise in 0.0f64..3.0) {
            let schema = load_prompt_schema();
            let cfg = CorpusConfig { essays_per_prompt: 10, noise_sigma: noise, seed, ..CorpusConfig::default() };
            for r in generate_corpus(&schema, &cfg).unwrap() {
                prop_assert!(r.gold.validate(schema.prompt(r.prompt_id).unwrap()).is_ok());
            }
        }
    }
}
