//! Visit-length histogram and medication-history overlap statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Dataset, PatientRecord};
use crate::error::{Error, Result};

/// History windows reported by [`dataset_stats`]; `None` is the full history.
pub const WINDOWS: [Option<usize>; 4] = [Some(1), Some(2), Some(3), None];

/// Table-style dataset summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub patients: usize,
    pub visits: usize,
    pub diagnosis_vocab: usize,
    pub procedure_vocab: usize,
    pub medication_vocab: usize,
    pub avg_visits: f64,
    pub max_visits: usize,
    pub avg_diagnoses: f64,
    pub max_diagnoses: usize,
    pub avg_procedures: f64,
    pub max_procedures: usize,
    pub avg_medications: f64,
    pub max_medications: usize,
    pub ddi_pairs: usize,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        let visits: Vec<_> = ds.patients.iter().flat_map(|p| &p.visits).collect();
        let nv = visits.len().max(1) as f64;
        let avg_max = |f: &dyn Fn(&super::Visit) -> usize| {
            let total: usize = visits.iter().map(|v| f(v)).sum();
            (total as f64 / nv, visits.iter().map(|v| f(v)).max().unwrap_or(0))
        };
        let (avg_diagnoses, max_diagnoses) = avg_max(&|v| v.diagnoses.len());
        let (avg_procedures, max_procedures) = avg_max(&|v| v.procedures.len());
        let (avg_medications, max_medications) = avg_max(&|v| v.medications.len());
        Self {
            patients: ds.patients.len(),
            visits: visits.len(),
            diagnosis_vocab: ds.vocab.diagnosis_count(),
            procedure_vocab: ds.vocab.procedure_count(),
            medication_vocab: ds.vocab.medication_count(),
            avg_visits: visits.len() as f64 / ds.patients.len().max(1) as f64,
            max_visits: ds.patients.iter().map(|p| p.visit_count()).max().unwrap_or(0),
            avg_diagnoses,
            max_diagnoses,
            avg_procedures,
            max_procedures,
            avg_medications,
            max_medications,
            ddi_pairs: ds.ddi.pair_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    /// 1-based position of the visit within its patient.
    pub visit_index: usize,
    /// Number of preceding visits pooled as history; `None` pools all.
    pub window: Option<usize>,
    /// Mean fraction of current medications already seen in the window.
    pub overlap_rate: f64,
    /// Mean Jaccard between current medications and the window's union.
    pub jaccard: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryJaccard {
    pub visit_index: usize,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Visit count -> number of patients.
    pub visit_count_histogram: BTreeMap<usize, usize>,
    pub history_jaccard: Vec<HistoryJaccard>,
    pub windows: Vec<WindowStat>,
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Per-visit Jaccard between each visit's medications and the union of all
/// earlier visits' medications, for visits 2..T.
pub fn history_jaccard(patient: &PatientRecord) -> Vec<f64> {
    let mut history = BTreeSet::new();
    let mut out = Vec::new();
    for (t, v) in patient.visits.iter().enumerate() {
        let current: BTreeSet<usize> = v.medications.iter().copied().collect();
        if t > 0 {
            out.push(jaccard(&current, &history));
        }
        history.extend(current);
    }
    out
}

pub fn dataset_stats(records: &[PatientRecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::contract("statistics of an empty dataset"));
    }
    let mut histogram = BTreeMap::new();
    let mut hist_acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut win_acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();

    for p in records {
        *histogram.entry(p.visit_count()).or_insert(0) += 1;
        for (k, j) in history_jaccard(p).into_iter().enumerate() {
            let e = hist_acc.entry(k + 2).or_insert((0.0, 0));
            e.0 += j;
            e.1 += 1;
        }
        let sets: Vec<BTreeSet<usize>> = p
            .visits
            .iter()
            .map(|v| v.medications.iter().copied().collect())
            .collect();
        for t in 1..sets.len() {
            if sets[t].is_empty() {
                continue;
            }
            for (wi, w) in WINDOWS.iter().enumerate() {
                let from = w.map_or(0, |w| t.saturating_sub(w));
                let window: BTreeSet<usize> = sets[from..t].iter().flatten().copied().collect();
                let overlap = sets[t].intersection(&window).count() as f64 / sets[t].len() as f64;
                let e = win_acc.entry((t + 1, wi)).or_insert((0.0, 0.0, 0));
                e.0 += overlap;
                e.1 += jaccard(&sets[t], &window);
                e.2 += 1;
            }
        }
    }

    Ok(DatasetStats {
        visit_count_histogram: histogram,
        history_jaccard: hist_acc
            .into_iter()
            .map(|(visit_index, (s, n))| HistoryJaccard {
                visit_index,
                mean: s / n as f64,
                count: n,
            })
            .collect(),
        windows: win_acc
            .into_iter()
            .map(|((visit_index, wi), (o, j, n))| WindowStat {
                visit_index,
                window: WINDOWS[wi],
                overlap_rate: o / n as f64,
                jaccard: j / n as f64,
                count: n,
            })
            .collect(),
    })
}
