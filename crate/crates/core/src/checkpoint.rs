//! Self-describing model checkpoints: configuration, every named tensor,
//! the tokenizer with its fingerprint, and the vocabulary tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Vocabulary;
use crate::model::{Model, ModelParams, Variant};
use crate::nn::Params;
use crate::tokenizer::BpeModel;
use crate::{Error, Result};

const FORMAT: &str = "recipegen-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Root seed of the run that produced the checkpoint.
    pub seed: u64,
    /// Epoch (1-based) whose parameters are stored.
    pub epoch: usize,
    pub dev_ppl: Option<f64>,
    pub model: Model,
    pub bpe_fingerprint: String,
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    /// Tensor names and shapes, for inspection without deserializing the model.
    pub tensors: Vec<(String, [usize; 2])>,
}

impl Checkpoint {
    pub fn new(model: Model, bpe: BpeModel, vocab: Vocabulary, seed: u64, epoch: usize, dev_ppl: Option<f64>) -> Self {
        let tensors = model.params.named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        Checkpoint {
            format: FORMAT.to_string(),
            seed,
            epoch,
            dev_ppl,
            bpe_fingerprint: bpe.fingerprint(),
            model,
            bpe,
            vocab,
            tensors,
        }
    }

    pub fn variant(&self) -> Variant {
        self.model.variant()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.check()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Invalid(format!("unsupported checkpoint format {:?}", self.format)));
        }
        if self.bpe.fingerprint() != self.bpe_fingerprint {
            return Err(Error::Invalid("tokenizer fingerprint mismatch".into()));
        }
        self.model.config.validate()?;
        if self.model.config.tables != self.vocab.tables(&self.bpe) {
            return Err(Error::Invalid("model tables do not match the stored vocabulary".into()));
        }
        let shapes: Vec<(String, [usize; 2])> =
            self.model.params.named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        let expected: Vec<(String, [usize; 2])> =
            ModelParams::init(&self.model.config, 0).named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        if shapes != expected {
            return Err(Error::Invalid("parameter shapes do not match the model configuration".into()));
        }
        if shapes != self.tensors {
            return Err(Error::Invalid("tensor listing does not match the parameters".into()));
        }
        if !self.model.all_finite() {
            return Err(Error::Invalid("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }
}
