//! Longitudinal EHR records, the drug-drug interaction graph, dataset
//! ingestion, splitting, synthetic generation and descriptive statistics.

mod io;
mod split;
mod stats;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use io::write_atomic;
pub use io::{load_dataset, load_patients, save_dataset, DDI_FILE, PATIENTS_FILE, VOCAB_FILE};
pub use split::{split_dataset, DatasetSplit};
pub use stats::{dataset_stats, history_jaccard, DatasetStats, DatasetSummary, WindowStat};
pub use synth::{synth_generate, RuleTable, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodeKind {
    Diagnosis,
    Procedure,
    Medication,
}

/// Diagnosis, procedure and medication code lists with dense 0-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct CodeVocabulary {
    diagnoses: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
    lookup: HashMap<String, (CodeKind, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VocabFile {
    diagnoses: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
}

impl TryFrom<VocabFile> for CodeVocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        Self::new(f.diagnoses, f.procedures, f.medications)
    }
}

impl From<CodeVocabulary> for VocabFile {
    fn from(v: CodeVocabulary) -> Self {
        VocabFile {
            diagnoses: v.diagnoses,
            procedures: v.procedures,
            medications: v.medications,
        }
    }
}

impl CodeVocabulary {
    /// Fails if any code string appears twice, within or across namespaces.
    pub fn new(diagnoses: Vec<String>, procedures: Vec<String>, medications: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::new();
        for (kind, list) in [
            (CodeKind::Diagnosis, &diagnoses),
            (CodeKind::Procedure, &procedures),
            (CodeKind::Medication, &medications),
        ] {
            for (i, code) in list.iter().enumerate() {
                if lookup.insert(code.clone(), (kind, i)).is_some() {
                    return Err(Error::contract(format!("code {code:?} appears more than once")));
                }
            }
        }
        Ok(Self {
            diagnoses,
            procedures,
            medications,
            lookup,
        })
    }

    /// Vocabulary with generated codes `D000`, `P000`, `M000`, ...
    pub fn synthetic(diagnoses: usize, procedures: usize, medications: usize) -> Self {
        let gen = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i:03}")).collect();
        Self::new(gen("D", diagnoses), gen("P", procedures), gen("M", medications))
            .expect("generated codes are distinct")
    }

    pub fn size(&self, kind: CodeKind) -> usize {
        self.codes(kind).len()
    }

    pub fn diagnosis_count(&self) -> usize {
        self.diagnoses.len()
    }

    pub fn procedure_count(&self) -> usize {
        self.procedures.len()
    }

    pub fn medication_count(&self) -> usize {
        self.medications.len()
    }

    pub fn codes(&self, kind: CodeKind) -> &[String] {
        match kind {
            CodeKind::Diagnosis => &self.diagnoses,
            CodeKind::Procedure => &self.procedures,
            CodeKind::Medication => &self.medications,
        }
    }

    pub fn index_of(&self, kind: CodeKind, code: &str) -> Option<usize> {
        match self.lookup.get(code) {
            Some(&(k, i)) if k == kind => Some(i),
            _ => None,
        }
    }
}

/// One admission: sorted, duplicate-free diagnosis, procedure and
/// medication index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub diagnoses: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<usize>,
}

impl Visit {
    /// Sorts each set. Fails on duplicates or an empty diagnosis or
    /// procedure set.
    pub fn new(diagnoses: Vec<usize>, procedures: Vec<usize>, medications: Vec<usize>) -> Result<Self> {
        let diagnoses = sorted_set(diagnoses, "diagnosis")?;
        let procedures = sorted_set(procedures, "procedure")?;
        let medications = sorted_set(medications, "medication")?;
        if diagnoses.is_empty() {
            return Err(Error::contract("visit has no diagnoses"));
        }
        if procedures.is_empty() {
            return Err(Error::contract("visit has no procedures"));
        }
        Ok(Self {
            diagnoses,
            procedures,
            medications,
        })
    }

    /// Checks every index against the vocabulary sizes.
    pub fn check_bounds(&self, vocab: &CodeVocabulary) -> Result<()> {
        for (kind, set, label) in [
            (CodeKind::Diagnosis, &self.diagnoses, "diagnosis"),
            (CodeKind::Procedure, &self.procedures, "procedure"),
            (CodeKind::Medication, &self.medications, "medication"),
        ] {
            let n = vocab.size(kind);
            if let Some(bad) = set.iter().find(|&&i| i >= n) {
                return Err(Error::contract(format!(
                    "{label} index {bad} out of range for vocabulary of {n}"
                )));
            }
        }
        Ok(())
    }
}

fn sorted_set(mut v: Vec<usize>, label: &str) -> Result<Vec<usize>> {
    v.sort_unstable();
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::contract(format!("duplicate {label} index {}", w[0])));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, visits: Vec<Visit>) -> Result<Self> {
        if visits.is_empty() {
            return Err(Error::contract("patient has no visits"));
        }
        Ok(Self {
            id: id.into(),
            visits,
        })
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }
}

/// Symmetric, zero-diagonal binary adjacency over medications.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DdiMatrix {
    size: usize,
    adjacency: Vec<bool>,
}

impl DdiMatrix {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            adjacency: vec![false; size * size],
        }
    }

    /// Builds the matrix from ordered pairs, which must list both `(i, j)`
    /// and `(j, i)`.
    pub fn from_ordered_pairs(size: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(size);
        for &(i, j) in pairs {
            m.check_pair(i, j)?;
            m.adjacency[i * size + j] = true;
        }
        for &(i, j) in pairs {
            if !m.adjacency[j * size + i] {
                return Err(Error::contract(format!("pair ({i}, {j}) has no mirror ({j}, {i})")));
            }
        }
        Ok(m)
    }

    /// Builds the matrix from unordered pairs, setting both orientations.
    pub fn from_unordered_pairs(size: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(size);
        for &(i, j) in pairs {
            m.check_pair(i, j)?;
            m.adjacency[i * size + j] = true;
            m.adjacency[j * size + i] = true;
        }
        Ok(m)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.size || j >= self.size {
            return Err(Error::contract(format!(
                "pair ({i}, {j}) out of range for {} medications",
                self.size
            )));
        }
        if i == j {
            return Err(Error::contract(format!("self-interaction ({i}, {i}) on the diagonal")));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn interacts(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.size + j]
    }

    /// Unordered interacting pairs `i < j`.
    pub fn unordered_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in i + 1..self.size {
                if self.interacts(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn pair_count(&self) -> usize {
        self.unordered_pairs().len()
    }

    pub fn transposed(&self) -> Self {
        let n = self.size;
        let mut t = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                t.adjacency[j * n + i] = self.adjacency[i * n + j];
            }
        }
        t
    }

    /// Dense 0/1 matrix for the loss.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.adjacency.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::matrix(self.size.max(1), self.size.max(1), data).expect("square")
    }
}

/// Vocabulary, patients and interaction graph loaded together.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: CodeVocabulary,
    pub patients: Vec<PatientRecord>,
    pub ddi: DdiMatrix,
}

impl Dataset {
    pub fn visit_count(&self) -> usize {
        self.patients.iter().map(PatientRecord::visit_count).sum()
    }

    /// Patients whose ids appear in `ids`, in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Vec<PatientRecord> {
        let by_id: HashMap<&str, &PatientRecord> =
            self.patients.iter().map(|p| (p.id.as_str(), p)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|p| (*p).clone())).collect()
    }
}

/// Binary indicator vector with ones at `indices`.
pub fn to_multihot(indices: &[usize], size: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; size];
    for &i in indices {
        if i >= size {
            return Err(Error::contract(format!("index {i} out of range for size {size}")));
        }
        out[i] = 1.0;
    }
    Ok(out)
}
