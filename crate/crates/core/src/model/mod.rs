//! The full recommender: visit encoder, recurrent longitudinal encoder and
//! prediction head over one shared parameter store.

pub mod longitudinal;
pub mod objective;
pub mod set_encoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use longitudinal::{LongitudinalEncoder, LongitudinalKind};
pub use objective::{DdiSign, PredictionHead, DEFAULT_ALPHA, THRESHOLD};
pub use set_encoder::{MedicationInput, SetEncoderKind, VisitEncoder};

use crate::autograd::{Tape, Var};
use crate::data::{to_multihot, CodeVocabulary, DdiMatrix, PatientRecord};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Code embedding width; visit tokens are `3 * dim` wide.
    pub dim: usize,
    pub inducing_points: usize,
    pub heads: usize,
    pub state_vectors: usize,
    /// Heads of the attentions inside the recurrent block.
    pub recurrent_heads: usize,
    pub set_encoder: SetEncoderKind,
    pub longitudinal: LongitudinalKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            inducing_points: 16,
            heads: 4,
            state_vectors: 4,
            recurrent_heads: 1,
            set_encoder: SetEncoderKind::Isab,
            longitudinal: LongitudinalKind::RecurrentAttention,
        }
    }
}

impl ModelConfig {
    /// Small model that trains in seconds on a laptop.
    pub fn desk() -> Self {
        Self {
            dim: 32,
            inducing_points: 8,
            heads: 2,
            state_vectors: 2,
            ..Self::default()
        }
    }

    pub fn model_width(&self) -> usize {
        3 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.inducing_points == 0 || self.state_vectors == 0 {
            return Err(Error::config("dim, inducing_points and state_vectors must be positive"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!("heads ({}) must divide dim ({})", self.heads, self.dim)));
        }
        let width = self.model_width();
        if self.recurrent_heads == 0 || width % self.recurrent_heads != 0 {
            return Err(Error::config(format!(
                "recurrent_heads ({}) must divide the model width ({width})",
                self.recurrent_heads
            )));
        }
        Ok(())
    }
}

/// Vocabulary sizes a model was built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub diagnoses: usize,
    pub procedures: usize,
    pub medications: usize,
}

impl VocabSizes {
    pub fn of(vocab: &CodeVocabulary) -> Self {
        Self {
            diagnoses: vocab.diagnosis_count(),
            procedures: vocab.procedure_count(),
            medications: vocab.medication_count(),
        }
    }
}

/// Loss computed for one patient.
#[derive(Clone, Copy, Debug)]
pub struct PatientLoss {
    pub total: Var,
    pub bce: Var,
    pub ddi: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: VocabSizes,
    pub params: ParamStore,
    pub encoder: VisitEncoder,
    pub longitudinal: LongitudinalEncoder,
    pub head: PredictionHead,
}

impl Model {
    /// Freshly initialised model; parameters are a pure function of `seed`.
    pub fn new(config: ModelConfig, vocab: VocabSizes, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.diagnoses == 0 || vocab.procedures == 0 || vocab.medications == 0 {
            return Err(Error::config("every vocabulary must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = VisitEncoder::new(
            &mut params,
            [vocab.diagnoses, vocab.procedures, vocab.medications],
            config.set_encoder,
            config.dim,
            config.inducing_points,
            config.heads,
            &mut rng,
        )?;
        let width = config.model_width();
        let longitudinal = LongitudinalEncoder::new(
            &mut params,
            config.longitudinal,
            width,
            config.state_vectors,
            config.recurrent_heads,
            &mut rng,
        )?;
        let head = PredictionHead::new(&mut params, width, vocab.medications, &mut rng);
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            longitudinal,
            head,
        })
    }

    /// Rebuilds the architecture and installs `params`, which must match it
    /// name for name and shape for shape.
    pub fn with_params(config: ModelConfig, vocab: VocabSizes, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, vocab, 0)?;
        model.params.check_compatible(&params)?;
        model.params = params;
        Ok(model)
    }

    /// Medication probability rows, one per visit.
    pub fn forward(&self, tape: &mut Tape, patient: &PatientRecord) -> Result<Vec<Var>> {
        let visits = &patient.visits;
        let vocab = CodeBounds::from(self.vocab);
        let mut tokens = Vec::with_capacity(visits.len());
        for t in 0..visits.len() {
            vocab.check(&patient.id, t, &visits[t])?;
            let previous = MedicationInput::for_visit(visits, t);
            tokens.push(self.encoder.forward(tape, &self.params, &visits[t], previous)?);
        }
        let updated = self.longitudinal.encode_sequence(tape, &self.params, &tokens)?;
        updated
            .into_iter()
            .map(|u| objective::predict_probabilities(tape, &self.params, &self.head, u))
            .collect()
    }

    /// `bce + alpha * ddi` over all visits of one patient. `adjacency` may
    /// be `None` when `alpha == 0`.
    pub fn patient_loss(
        &self,
        tape: &mut Tape,
        patient: &PatientRecord,
        ddi: Option<&DdiMatrix>,
        alpha: f64,
        sign: DdiSign,
    ) -> Result<PatientLoss> {
        let probs = self.forward(tape, patient)?;
        let m = self.vocab.medications;
        let targets = patient
            .visits
            .iter()
            .map(|v| to_multihot(&v.medications, m))
            .collect::<Result<Vec<_>>>()?;
        let bce = objective::bce_loss(tape, &probs, &targets)?;
        let ddi_term = match ddi {
            Some(matrix) if alpha > 0.0 => {
                if matrix.size() != m {
                    return Err(Error::shape(format!(
                        "interaction matrix covers {} medications, model predicts {m}",
                        matrix.size()
                    )));
                }
                let adjacency = tape.leaf(matrix.to_tensor())?;
                objective::ddi_loss(tape, &probs, adjacency, sign)?
            }
            _ => tape.leaf(crate::tensor::Tensor::scalar(0.0))?,
        };
        let total = objective::combined_loss(tape, bce, ddi_term, alpha)?;
        Ok(PatientLoss {
            total,
            bce,
            ddi: ddi_term,
        })
    }

    /// Probability vectors per visit, computed without keeping the tape.
    pub fn predict(&self, patient: &PatientRecord) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let probs = self.forward(&mut tape, patient)?;
        Ok(probs.into_iter().map(|p| tape.value(p).data().to_vec()).collect())
    }
}

struct CodeBounds([usize; 3]);

impl From<VocabSizes> for CodeBounds {
    fn from(v: VocabSizes) -> Self {
        CodeBounds([v.diagnoses, v.procedures, v.medications])
    }
}

impl CodeBounds {
    fn check(&self, id: &str, t: usize, visit: &crate::data::Visit) -> Result<()> {
        let sets = [&visit.diagnoses, &visit.procedures, &visit.medications];
        for (set, &bound) in sets.iter().zip(&self.0) {
            if let Some(&bad) = set.iter().find(|&&c| c >= bound) {
                return Err(Error::contract(format!(
                    "patient {id} visit {}: code index {bad} outside vocabulary of {bound}",
                    t + 1
                )));
            }
        }
        Ok(())
    }
}
