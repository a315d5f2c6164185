//! Output layer, multi-label and interaction losses, and thresholded
//! inference.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::ParamStore;

/// Probability clip applied inside the cross-entropy logs.
pub const PROB_CLIP: f64 = 1e-12;

/// Inference threshold; a code is predicted when its probability is
/// strictly greater.
pub const THRESHOLD: f64 = 0.5;

/// Default interaction penalty weight.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug)]
pub struct PredictionHead {
    pub out: Linear,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, width: usize, medications: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            out: Linear::new(store, "head", width, medications, rng),
        }
    }
}

/// `sigmoid(V_hat W_o + b_o)`, one probability per medication.
pub fn predict_probabilities(tape: &mut Tape, store: &ParamStore, head: &PredictionHead, updated: Var) -> Result<Var> {
    let width = store.get(head.out.w).rows();
    let got = tape.value(updated).cols();
    if got != width {
        return Err(Error::shape(format!("representation of width {got} into head of width {width}")));
    }
    let logits = head.out.forward(tape, store, updated)?;
    Ok(tape.sigmoid(logits))
}

/// Summed binary cross entropy over visits and codes.
pub fn bce_loss(tape: &mut Tape, probs: &[Var], targets: &[Vec<f64>]) -> Result<Var> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::shape(format!("{} visits of predictions vs {} targets", probs.len(), targets.len())));
    }
    let mut total: Option<Var> = None;
    for (&p, m) in probs.iter().zip(targets) {
        let l = tape.bce_sum(p, m, PROB_CLIP)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty"))
}

/// How the interaction term enters the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DdiSign {
    /// `+ sum A_ij y_i y_j`: co-predicting interacting pairs costs loss.
    #[default]
    Penalty,
    /// The printed formula with its leading minus sign.
    Literal,
}

/// `sum_t sum_{i,j} A[i,j] y_i y_j` over both orderings of each pair.
/// `adjacency` is a `|M| x |M|` constant already on the tape.
pub fn ddi_loss(tape: &mut Tape, probs: &[Var], adjacency: Var, sign: DdiSign) -> Result<Var> {
    let (r, c) = tape.value(adjacency).dims2()?;
    let mut total: Option<Var> = None;
    for &p in probs {
        let w = tape.value(p).cols();
        if r != w || c != w {
            return Err(Error::shape(format!("interaction matrix {r}x{c} for {w} medications")));
        }
        let ya = tape.matmul(p, adjacency)?;
        let prod = tape.mul(ya, p)?;
        let s = tape.sum_all(prod);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| Error::shape("no visits"))?;
    Ok(match sign {
        DdiSign::Penalty => total,
        DdiSign::Literal => tape.scale(total, -1.0),
    })
}

/// `bce + alpha * ddi`; with `alpha == 0` the result is `bce` itself.
pub fn combined_loss(tape: &mut Tape, bce: Var, ddi: Var, alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("penalty weight must be non-negative, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(bce);
    }
    let weighted = tape.scale(ddi, alpha);
    tape.add(bce, weighted)
}

/// Indices whose probability exceeds [`THRESHOLD`].
pub fn infer_medications(probs: &[f64]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}
