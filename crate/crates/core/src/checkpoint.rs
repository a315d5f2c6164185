//! Versioned JSON container for a trained model and its optimizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{write_atomic, CodeVocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, VocabSizes};
use crate::optim::OptimizerState;
use crate::params::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub vocab: VocabSizes,
    /// Code strings, so patient files can be read without the dataset.
    pub vocabulary: CodeVocabulary,
    pub epoch: usize,
    pub validation_jaccard: Option<f64>,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        vocabulary: &CodeVocabulary,
        model: &Model,
        optimizer: &OptimizerState,
        epoch: usize,
        validation_jaccard: Option<f64>,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: config.clone(),
            vocab: model.vocab,
            vocabulary: vocabulary.clone(),
            epoch,
            validation_jaccard,
            params: model.params.clone(),
            optimizer: optimizer.clone(),
        }
    }

    /// Serializes to a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path.as_ref(), e))?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "{}: checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn model(&self) -> Result<Model> {
        Model::with_params(self.config.model(), self.vocab, self.params.clone())
    }

    /// Fails with a message naming both sizes when `vocab` differs from the
    /// one the model was trained on.
    pub fn check_vocab(&self, vocab: VocabSizes) -> Result<()> {
        if vocab != self.vocab {
            return Err(Error::config(format!(
                "checkpoint was trained on {} diagnoses / {} procedures / {} medications, dataset has {} / {} / {}",
                self.vocab.diagnoses,
                self.vocab.procedures,
                self.vocab.medications,
                vocab.diagnoses,
                vocab.procedures,
                vocab.medications
            )));
        }
        Ok(())
    }
}
