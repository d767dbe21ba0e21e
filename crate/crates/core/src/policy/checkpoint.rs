use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::PolicyParams;
use crate::corpus::{Schema, TraitId};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_FORMAT: &str = "samrl-checkpoint/1";

/// Everything needed to resume or evaluate a policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub stage: String,
    pub schema_hash: String,
    pub schema: Schema,
    pub vocab: Vocabulary,
    pub order: Vec<TraitId>,
    pub params: PolicyParams,
    /// Free-form record of the settings that produced the parameters.
    pub hyperparameters: serde_json::Value,
    pub rng: Option<ChaCha8Rng>,
}

impl Checkpoint {
    pub fn new(stage: &str, schema: &Schema, vocab: &Vocabulary, order: &[TraitId], params: PolicyParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            stage: stage.into(),
            schema_hash: schema.hash(),
            schema: schema.clone(),
            vocab: vocab.clone(),
            order: order.to_vec(),
            params,
            hyperparameters: serde_json::Value::Null,
            rng: None,
        }
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads a checkpoint, rejecting one written for a different schema.
    pub fn load(path: &Path, expected_schema_hash: Option<&str>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!("unsupported checkpoint format {}", ck.format)));
        }
        let actual = ck.schema.hash();
        if actual != ck.schema_hash {
            return Err(Error::SchemaMismatch { expected: ck.schema_hash, found: actual });
        }
        if let Some(expected) = expected_schema_hash {
            if expected != ck.schema_hash {
                return Err(Error::SchemaMismatch { expected: expected.into(), found: ck.schema_hash });
            }
        }
        if ck.params.vocab_size() != ck.vocab.len() {
            return Err(Error::Validation("checkpoint vocabulary does not match parameters".into()));
        }
        Ok(ck)
    }
}
