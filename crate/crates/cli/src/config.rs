//! TOML run configuration. Every key is optional; an empty file gives the
//! reference experiment.
//!
//! ```toml
//! [corpus]      # essays_per_prompt, noise_sigma, vocab_size_body, body_length_range, seed
//! [policy]      # d_model, n_heads, n_layers, d_ff, max_source_len, max_target_len
//! [pretrain]    # epochs, batch_size, learning_rate, patience, eval_every, max_grad_norm
//! [trainer]     # gamma, gae_lambda, clip_epsilon, c1, c2, beta, lambda_q, updates, ...
//! [experiment]  # variant, folds, seeds_per_fold, seed, tie_break
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use samrl::corpus::{load_prompt_schema, CorpusConfig, Schema, TieBreak};
use samrl::harness::ExperimentConfig;
use samrl::policy::{PolicyConfig, PretrainConfig};
use samrl::ppo::{TrainerConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    variant: Variant,
    folds: usize,
    seeds_per_fold: usize,
    seed: u64,
    tie_break: TieBreak,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        ExperimentSection {
            variant: d.variant,
            folds: d.folds,
            seeds_per_fold: d.seeds_per_fold,
            seed: d.seed,
            tie_break: d.tie_break,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    corpus: CorpusConfig,
    policy: PolicyConfig,
    pretrain: PretrainConfig,
    trainer: TrainerConfig,
    experiment: ExperimentSection,
}

/// A parsed configuration plus the bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: Option<PathBuf>,
    pub sha256: String,
    pub experiment: ExperimentConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: FileConfig = toml::from_str(text)?;
    let e = file.experiment;
    let cfg = ExperimentConfig {
        corpus: file.corpus,
        policy: file.policy,
        pretrain: file.pretrain,
        trainer: file.trainer,
        variant: e.variant,
        folds: e.folds,
        seeds_per_fold: e.seeds_per_fold,
        seed: e.seed,
        tie_break: e.tie_break,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` (or the built-in defaults) and applies a `--seed` override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<LoadedConfig> {
    let (bytes, path) = match path {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            (bytes, Some(p.to_path_buf()))
        }
        None => (Vec::new(), None),
    };
    let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
    let mut experiment = parse_config(text).with_context(|| match &path {
        Some(p) => format!("parsing config {}", p.display()),
        None => "building default config".into(),
    })?;
    if let Some(seed) = seed {
        experiment = experiment.with_seed(seed);
    }
    Ok(LoadedConfig { path, sha256: sha256_hex(&bytes), experiment })
}

pub fn load_schema(path: Option<&Path>) -> Result<Schema> {
    match path {
        None => Ok(load_prompt_schema()),
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading schema {}", p.display()))?;
            let schema: Schema = serde_json::from_slice(&bytes).context("parsing schema")?;
            Ok(Schema::new(schema.prompts().to_vec())?)
        }
    }
}
