//! On-disk dataset directory: `vocab.json`, `patients.jsonl`, `ddi.json`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CodeVocabulary, Dataset, DdiMatrix, PatientRecord, Visit};
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.json";
pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const DDI_FILE: &str = "ddi.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitLine {
    diagnoses: Vec<usize>,
    procedures: Vec<usize>,
    medications: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    id: String,
    visits: Vec<VisitLine>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset directory. Every visit must carry at
/// least one medication.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    let patients = load_patients(dir.join(PATIENTS_FILE), &vocab, true)?;
    let ddi = load_ddi(&dir.join(DDI_FILE), vocab.medication_count())?;
    Ok(Dataset { vocab, patients, ddi })
}

fn load_vocab(path: &Path) -> Result<CodeVocabulary> {
    let text = read(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let list = |key: &str| -> Result<Vec<String>> {
        let arr = raw
            .get(key)
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::ingest(path, 1, format!("missing code list {key:?}")))?;
        arr.iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| Error::ingest(path, line_of(&text, &c.to_string()), "code is not a string"))
            })
            .collect()
    };
    let (d, p, m) = (list("diagnoses")?, list("procedures")?, list("medications")?);
    let mut seen = HashSet::new();
    for code in d.iter().chain(&p).chain(&m) {
        if !seen.insert(code) {
            let quoted = serde_json::to_string(code).expect("string");
            let line = nth_line_of(&text, &quoted, 1).unwrap_or(1);
            return Err(Error::ingest(path, line, format!("code {code:?} is listed more than once")));
        }
    }
    CodeVocabulary::new(d, p, m).map_err(|e| Error::ingest(path, 1, e.to_string()))
}

fn line_of(text: &str, needle: &str) -> usize {
    nth_line_of(text, needle, 0).unwrap_or(1)
}

fn nth_line_of(text: &str, needle: &str, nth: usize) -> Option<usize> {
    text.match_indices(needle)
        .nth(nth)
        .map(|(pos, _)| text[..pos].matches('\n').count() + 1)
}

/// Loads a patient file against `vocab`. With `require_medications`, a
/// visit without medications is rejected.
pub fn load_patients(
    path: impl AsRef<Path>,
    vocab: &CodeVocabulary,
    require_medications: bool,
) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut patients = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PatientLine = serde_json::from_str(line)
            .map_err(|e| Error::ingest(path, lineno, format!("malformed record: {e}")))?;
        if !ids.insert(raw.id.clone()) {
            return Err(Error::ingest(path, lineno, format!("duplicate patient id {:?}", raw.id)));
        }
        let mut visits = Vec::with_capacity(raw.visits.len());
        for (t, v) in raw.visits.into_iter().enumerate() {
            let at = |e: Error| Error::ingest(path, lineno, format!("patient {:?} visit {}: {e}", raw.id, t + 1));
            if require_medications && v.medications.is_empty() {
                return Err(at(Error::contract("visit has no medications")));
            }
            let visit = Visit::new(v.diagnoses, v.procedures, v.medications).map_err(at)?;
            visit.check_bounds(vocab).map_err(at)?;
            visits.push(visit);
        }
        let record = PatientRecord::new(raw.id, visits).map_err(|e| Error::ingest(path, lineno, e.to_string()))?;
        patients.push(record);
    }
    Ok(patients)
}

fn load_ddi(path: &Path, size: usize) -> Result<DdiMatrix> {
    let text = read(path)?;
    let pairs: Vec<(usize, usize)> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    // the k-th pair opens with the (k+1)-th '['
    let line_of_pair = |k: usize| nth_line_of(&text, "[", k + 1).unwrap_or(1);
    let mut set = HashSet::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i >= size || j >= size {
            return Err(Error::ingest(
                path,
                line_of_pair(k),
                format!("pair ({i}, {j}) out of range for {size} medications"),
            ));
        }
        if i == j {
            return Err(Error::ingest(path, line_of_pair(k), format!("diagonal entry ({i}, {i})")));
        }
        set.insert((i, j));
    }
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if !set.contains(&(j, i)) {
            return Err(Error::ingest(
                path,
                line_of_pair(k),
                format!("asymmetric entry ({i}, {j}) without ({j}, {i})"),
            ));
        }
    }
    DdiMatrix::from_ordered_pairs(size, &pairs).map_err(|e| Error::ingest(path, 1, e.to_string()))
}

/// Writes to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the three dataset files into `dir`, creating it if needed.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let vocab = serde_json::to_string_pretty(&dataset.vocab).expect("vocab serializes");
    write_atomic(&dir.join(VOCAB_FILE), format!("{vocab}\n").as_bytes())?;

    let mut lines = String::new();
    for p in &dataset.patients {
        let line = PatientLine {
            id: p.id.clone(),
            visits: p
                .visits
                .iter()
                .map(|v| VisitLine {
                    diagnoses: v.diagnoses.clone(),
                    procedures: v.procedures.clone(),
                    medications: v.medications.clone(),
                })
                .collect(),
        };
        lines.push_str(&serde_json::to_string(&line).expect("record serializes"));
        lines.push('\n');
    }
    write_atomic(&dir.join(PATIENTS_FILE), lines.as_bytes())?;

    let mut ddi = String::from("[\n");
    let n = dataset.ddi.size();
    let mut first = true;
    for i in 0..n {
        for j in 0..n {
            if dataset.ddi.interacts(i, j) {
                if !first {
                    ddi.push_str(",\n");
                }
                first = false;
                ddi.push_str(&format!("  [{i}, {j}]"));
            }
        }
    }
    ddi.push_str("\n]\n");
    write_atomic(&dir.join(DDI_FILE), ddi.as_bytes())
}
