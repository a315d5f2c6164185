//! Repeated subsampling of test patients with mean and spread per metric.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, PatientPrediction};
use crate::data::DdiMatrix;
use crate::error::{Error, Result};

/// Visit positions reported by [`visit_index_breakdown`].
pub const BUCKETS: std::ops::RangeInclusive<usize> = 1..=5;

/// Means over the patients of one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub patients: usize,
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub avg_drugs: f64,
}

/// Metrics restricted to the `visit_index`-th visit of every patient that
/// has one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitBucket {
    pub visit_index: usize,
    pub patients: usize,
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub avg_drugs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rounds: usize,
    pub fraction: f64,
    pub seed: u64,
    pub sampled_patients: usize,
    pub jaccard_mean: f64,
    pub jaccard_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub prauc_mean: f64,
    pub prauc_std: f64,
    pub ddi_rate_mean: f64,
    pub ddi_rate_std: f64,
    pub avg_drugs_mean: f64,
    pub avg_drugs_std: f64,
    /// Visits left out of the ranking metric because they have no
    /// positive label.
    pub prauc_excluded_visits: usize,
    pub per_round: Vec<RoundMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_visit_index: Option<Vec<VisitBucket>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

/// Samples `floor(fraction * N)` patients without replacement per round and
/// reports mean and population standard deviation across rounds.
pub fn bootstrap_evaluate(
    patients: &[PatientPrediction],
    ddi: &DdiMatrix,
    rounds: usize,
    fraction: f64,
    seed: u64,
) -> Result<MetricsReport> {
    if rounds == 0 {
        return Err(Error::config("at least one round is required"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("sampling fraction must lie in (0, 1], got {fraction}")));
    }
    let n = patients.len();
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 {
        return Err(Error::config(format!("sampling {fraction} of {n} patients selects nobody")));
    }
    let mut sorted: Vec<&PatientPrediction> = patients.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_round = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        let chosen: Vec<&PatientPrediction> = idx.iter().map(|&i| sorted[i]).collect();
        per_round.push(evaluate(&chosen, ddi));
    }
    let stat = |f: fn(&RoundMetrics) -> f64| {
        let mut w = Welford::default();
        per_round.iter().for_each(|r| w.push(f(r)));
        (w.mean, w.std())
    };
    let (jaccard_mean, jaccard_std) = stat(|r| r.jaccard);
    let (f1_mean, f1_std) = stat(|r| r.f1);
    let (prauc_mean, prauc_std) = stat(|r| r.prauc);
    let (ddi_rate_mean, ddi_rate_std) = stat(|r| r.ddi_rate);
    let (avg_drugs_mean, avg_drugs_std) = stat(|r| r.avg_drugs);
    let prauc_excluded_visits = patients
        .iter()
        .flat_map(|p| &p.visits)
        .filter(|v| v.truth.is_empty())
        .count();
    Ok(MetricsReport {
        rounds,
        fraction,
        seed,
        sampled_patients: k,
        jaccard_mean,
        jaccard_std,
        f1_mean,
        f1_std,
        prauc_mean,
        prauc_std,
        ddi_rate_mean,
        ddi_rate_std,
        avg_drugs_mean,
        avg_drugs_std,
        prauc_excluded_visits,
        per_round,
        by_visit_index: None,
        config: serde_json::Value::Null,
    })
}

/// Metrics of the 1st through 5th visits over all patients.
pub fn visit_index_breakdown(patients: &[PatientPrediction], ddi: &DdiMatrix) -> Vec<VisitBucket> {
    BUCKETS
        .map(|k| {
            let slices: Vec<PatientPrediction> = patients
                .iter()
                .filter(|p| p.visits.len() >= k)
                .map(|p| PatientPrediction {
                    id: p.id.clone(),
                    visits: vec![p.visits[k - 1].clone()],
                })
                .collect();
            let refs: Vec<&PatientPrediction> = slices.iter().collect();
            let m = evaluate(&refs, ddi);
            VisitBucket {
                visit_index: k,
                patients: m.patients,
                jaccard: m.jaccard,
                f1: m.f1,
                prauc: m.prauc,
                ddi_rate: m.ddi_rate,
                avg_drugs: m.avg_drugs,
            }
        })
        .collect()
}
