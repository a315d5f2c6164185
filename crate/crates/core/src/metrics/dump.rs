//! Prediction dumps: one JSON line per visit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, PatientRecord};
use crate::error::{Error, Result};
use crate::model::objective::infer_medications;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitPrediction {
    pub probabilities: Vec<f64>,
    /// Sorted indices with probability above the threshold.
    pub predicted: Vec<usize>,
    /// Sorted ground-truth medication indices.
    pub truth: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub id: String,
    pub visits: Vec<VisitPrediction>,
}

/// One line of a dump file. `visit_index` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpRecord {
    pub patient_id: String,
    pub visit_index: usize,
    pub probabilities: Vec<f64>,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

/// Runs `model` over every patient.
pub fn predict_dataset(model: &Model, patients: &[PatientRecord]) -> Result<Vec<PatientPrediction>> {
    patients
        .iter()
        .map(|p| {
            let probs = model.predict(p)?;
            let visits = probs
                .into_iter()
                .zip(&p.visits)
                .map(|(probabilities, v)| VisitPrediction {
                    predicted: infer_medications(&probabilities),
                    probabilities,
                    truth: v.medications.clone(),
                })
                .collect();
            Ok(PatientPrediction {
                id: p.id.clone(),
                visits,
            })
        })
        .collect()
}

/// Dump file contents for `patients`.
pub fn dump_text(patients: &[PatientPrediction]) -> String {
    let mut out = String::new();
    for p in patients {
        for (t, v) in p.visits.iter().enumerate() {
            let rec = DumpRecord {
                patient_id: p.id.clone(),
                visit_index: t + 1,
                probabilities: v.probabilities.clone(),
                predicted: v.predicted.clone(),
                truth: v.truth.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_dump(path: impl AsRef<Path>, patients: &[PatientPrediction]) -> Result<()> {
    write_atomic(path.as_ref(), dump_text(patients).as_bytes())
}

fn check_set(path: &Path, line: usize, what: &str, set: &[usize], width: usize) -> Result<()> {
    if set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ingest(path, line, format!("{what} indices must be strictly increasing")));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= width) {
        return Err(Error::ingest(path, line, format!("{what} index {bad} outside {width} medications")));
    }
    Ok(())
}

/// Reads a dump, grouping consecutive lines of the same patient.
pub fn read_dump(path: impl AsRef<Path>) -> Result<Vec<PatientPrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<PatientPrediction> = Vec::new();
    let mut width = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord =
            serde_json::from_str(raw).map_err(|e| Error::ingest(path, line, e.to_string()))?;
        let w = *width.get_or_insert(rec.probabilities.len());
        if rec.probabilities.len() != w {
            return Err(Error::ingest(
                path,
                line,
                format!("{} probabilities, earlier lines have {w}", rec.probabilities.len()),
            ));
        }
        check_set(path, line, "predicted", &rec.predicted, w)?;
        check_set(path, line, "truth", &rec.truth, w)?;
        let visit = VisitPrediction {
            probabilities: rec.probabilities,
            predicted: rec.predicted,
            truth: rec.truth,
        };
        match out.last_mut() {
            Some(p) if p.id == rec.patient_id => {
                if rec.visit_index != p.visits.len() + 1 {
                    return Err(Error::ingest(
                        path,
                        line,
                        format!("expected visit {} of patient {}, got {}", p.visits.len() + 1, p.id, rec.visit_index),
                    ));
                }
                p.visits.push(visit);
            }
            _ => {
                if rec.visit_index != 1 {
                    return Err(Error::ingest(path, line, "a patient's records must start at visit 1"));
                }
                if out.iter().any(|p| p.id == rec.patient_id) {
                    return Err(Error::ingest(path, line, format!("patient {} appears twice", rec.patient_id)));
                }
                out.push(PatientPrediction {
                    id: rec.patient_id,
                    visits: vec![visit],
                });
            }
        }
    }
    Ok(out)
}
