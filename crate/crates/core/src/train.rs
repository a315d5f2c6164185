//! Per-patient training loop with validation early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{write_atomic, CodeVocabulary, DdiMatrix, PatientRecord};
use crate::error::{Error, Result};
use crate::metrics::{self, predict_dataset};
use crate::model::{Model, VocabSizes};
use crate::optim::{adam_step, CurriculumContext, OptimizerState};

/// One optimizer step of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_jaccard: Option<f64>,
}

pub struct TrainOutcome {
    /// The best model by validation Jaccard, or the last one without a
    /// validation set.
    pub model: Model,
    pub optimizer: OptimizerState,
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<EpochSummary>,
    pub best_epoch: usize,
    pub best_validation_jaccard: Option<f64>,
}

/// Mean per-patient loss over `patients` at the current parameters.
pub fn mean_loss(model: &Model, patients: &[PatientRecord], ddi: &DdiMatrix, config: &RunConfig) -> Result<f64> {
    if patients.is_empty() {
        return Err(Error::config("no patients to score"));
    }
    let mut sum = 0.0;
    for p in patients {
        let mut tape = Tape::new();
        let l = model.patient_loss(&mut tape, p, Some(ddi), config.effective_alpha(), config.ddi_sign)?;
        sum += tape.value(l.total).item()?;
    }
    Ok(sum / patients.len() as f64)
}

/// Mean per-patient Jaccard of thresholded predictions.
pub fn mean_jaccard(model: &Model, patients: &[PatientRecord]) -> Result<f64> {
    let preds = predict_dataset(model, patients)?;
    let refs: Vec<_> = preds.iter().collect();
    Ok(metrics::evaluate(&refs, &DdiMatrix::empty(model.vocab.medications)).jaccard)
}

/// Where training writes its artifacts.
#[derive(Clone, Copy, Debug, Default)]
pub struct Outputs<'a> {
    /// Best checkpoint, rewritten atomically on every improvement.
    pub checkpoint: Option<&'a Path>,
}

pub fn train(
    config: &RunConfig,
    vocabulary: &CodeVocabulary,
    ddi: &DdiMatrix,
    train_set: &[PatientRecord],
    validation: &[PatientRecord],
    outputs: Outputs<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = VocabSizes::of(vocabulary);
    if train_set.is_empty() {
        return Err(Error::config("the training split is empty"));
    }
    if ddi.size() != vocab.medications {
        return Err(Error::shape(format!(
            "interaction matrix covers {} medications, vocabulary has {}",
            ddi.size(),
            vocab.medications
        )));
    }
    let mut model = Model::new(config.model(), vocab, config.seed)?;
    let horizon = config
        .max_iterations
        .unwrap_or((config.epochs * train_set.len()) as u64);
    let mut opt = OptimizerState::new(
        &model.params,
        config.learning_rate,
        horizon,
        config.moment_mode,
        config.schedule(),
    )?;
    opt.longest = train_set.iter().map(|p| p.visit_count() as u64).max().unwrap_or(1);

    let alpha = config.effective_alpha();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut trace = Vec::with_capacity(config.epochs * train_set.len());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model, OptimizerState)> = None;
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let patient = &train_set[i];
            let mut tape = Tape::new();
            let loss = model.patient_loss(&mut tape, patient, Some(ddi), alpha, config.ddi_sign)?;
            let value = tape.value(loss.total).item()?;
            if !value.is_finite() {
                return Err(Error::contract(format!(
                    "loss became {value} at step {} (patient {})",
                    opt.step + 1,
                    patient.id
                )));
            }
            let grads = tape.backward(loss.total)?.into_param_grads(&model.params);
            let ctx = CurriculumContext {
                iteration: opt.step,
                visits: patient.visit_count() as u64,
            };
            let lr = adam_step(&mut model.params, &grads, &mut opt, ctx)?;
            trace.push(TraceRow {
                step: opt.step,
                epoch,
                loss: value,
                lr,
            });
            sum += value;
        }
        let validation_jaccard = if validation.is_empty() {
            None
        } else {
            Some(mean_jaccard(&model, validation)?)
        };
        epochs.push(EpochSummary {
            epoch,
            mean_loss: sum / train_set.len() as f64,
            validation_jaccard,
        });
        match validation_jaccard {
            None => {
                if let Some(path) = outputs.checkpoint {
                    Checkpoint::new(config, vocabulary, &model, &opt, epoch, None).save(path)?;
                }
            }
            Some(score) => {
                if best.as_ref().map_or(true, |b| score > b.0) {
                    if let Some(path) = outputs.checkpoint {
                        Checkpoint::new(config, vocabulary, &model, &opt, epoch, Some(score)).save(path)?;
                    }
                    best = Some((score, epoch, model.clone(), opt.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
            }
        }
    }

    let last_epoch = epochs.last().map_or(0, |e| e.epoch);
    let (model, optimizer, best_epoch, best_validation_jaccard) = match best {
        Some((score, epoch, m, o)) => (m, o, epoch, Some(score)),
        None => (model, opt, last_epoch, None),
    };
    Ok(TrainOutcome {
        model,
        optimizer,
        trace,
        epochs,
        best_epoch,
        best_validation_jaccard,
    })
}

/// Writes the trace as CSV with columns `step,epoch,loss,lr`.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,epoch,loss,lr\n");
    for r in trace {
        out.push_str(&format!("{},{},{:e},{:e}\n", r.step, r.epoch, r.loss, r.lr));
    }
    write_atomic(path, out.as_bytes())
}

/// `loss_trace.<variant>.csv`
pub fn trace_file_name(config: &RunConfig) -> String {
    format!("loss_trace.{}.csv", config.ablations.tag())
}
