//! Set-level recommendation metrics and their patient-level aggregation.
//!
//! Aggregation is always per visit, then mean over a patient's visits, then
//! the unweighted mean over patients taken in ascending id order.

mod bootstrap;
mod dump;

pub use bootstrap::{bootstrap_evaluate, visit_index_breakdown, MetricsReport, RoundMetrics, VisitBucket, BUCKETS};
pub use dump::{dump_text, predict_dataset, read_dump, write_dump, DumpRecord, PatientPrediction, VisitPrediction};

use crate::data::DdiMatrix;

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|truth ∩ predicted| / |truth ∪ predicted|`; two empty sets score 1.
/// Both slices must be sorted and duplicate free.
pub fn visit_jaccard(truth: &[usize], predicted: &[usize]) -> f64 {
    let inter = intersection_size(truth, predicted);
    let union = truth.len() + predicted.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Harmonic mean of precision and recall. An empty prediction has
/// precision 0, or 1 when the truth is empty as well.
pub fn visit_f1(truth: &[usize], predicted: &[usize]) -> f64 {
    let inter = intersection_size(truth, predicted) as f64;
    let precision = if predicted.is_empty() {
        if truth.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        inter / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        if predicted.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        inter / truth.len() as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Average precision of the ranking induced by `scores` (descending, ties
/// by ascending index). `None` when no label is positive.
pub fn average_precision(scores: &[f64], truth: &[usize]) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let mut positive = vec![false; scores.len()];
    for &t in truth {
        positive[t] = true;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &code) in order.iter().enumerate() {
        if positive[code] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / truth.len() as f64)
}

/// Fraction of unordered predicted pairs that interact; 0 for fewer than
/// two predictions.
pub fn visit_ddi_rate(predicted: &[usize], ddi: &DdiMatrix) -> f64 {
    if predicted.len() < 2 {
        return 0.0;
    }
    let mut bad = 0usize;
    let mut all = 0usize;
    for (k, &i) in predicted.iter().enumerate() {
        for &j in &predicted[k + 1..] {
            all += 1;
            if ddi.interacts(i, j) {
                bad += 1;
            }
        }
    }
    bad as f64 / all as f64
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        n += 1;
        sum += v;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn jaccard(patient: &PatientPrediction) -> f64 {
    mean(patient.visits.iter().map(|v| visit_jaccard(&v.truth, &v.predicted))).unwrap_or(0.0)
}

pub fn f1(patient: &PatientPrediction) -> f64 {
    mean(patient.visits.iter().map(|v| visit_f1(&v.truth, &v.predicted))).unwrap_or(0.0)
}

/// Mean average precision over visits with at least one positive label.
pub fn prauc(patient: &PatientPrediction) -> Option<f64> {
    mean(
        patient
            .visits
            .iter()
            .filter_map(|v| average_precision(&v.probabilities, &v.truth)),
    )
}

pub fn ddi_rate(patient: &PatientPrediction, ddi: &DdiMatrix) -> f64 {
    mean(patient.visits.iter().map(|v| visit_ddi_rate(&v.predicted, ddi))).unwrap_or(0.0)
}

pub fn avg_drug_count(patient: &PatientPrediction) -> f64 {
    mean(patient.visits.iter().map(|v| v.predicted.len() as f64)).unwrap_or(0.0)
}

/// Metric values of one patient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatientMetrics {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: Option<f64>,
    pub ddi_rate: f64,
    pub avg_drugs: f64,
}

impl PatientMetrics {
    pub fn of(patient: &PatientPrediction, ddi: &DdiMatrix) -> Self {
        Self {
            jaccard: jaccard(patient),
            f1: f1(patient),
            prauc: prauc(patient),
            ddi_rate: ddi_rate(patient, ddi),
            avg_drugs: avg_drug_count(patient),
        }
    }
}

/// Unweighted means over patients, summed in ascending id order.
pub fn evaluate(patients: &[&PatientPrediction], ddi: &DdiMatrix) -> RoundMetrics {
    let mut sorted: Vec<&PatientPrediction> = patients.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let per: Vec<PatientMetrics> = sorted.iter().map(|p| PatientMetrics::of(p, ddi)).collect();
    RoundMetrics {
        patients: per.len(),
        jaccard: mean(per.iter().map(|m| m.jaccard)).unwrap_or(0.0),
        f1: mean(per.iter().map(|m| m.f1)).unwrap_or(0.0),
        prauc: mean(per.iter().filter_map(|m| m.prauc)).unwrap_or(0.0),
        ddi_rate: mean(per.iter().map(|m| m.ddi_rate)).unwrap_or(0.0),
        avg_drugs: mean(per.iter().map(|m| m.avg_drugs)).unwrap_or(0.0),
    }
}
