//! Synthetic longitudinal records with planted diagnosis-to-medication rules.
//!
//! Ground truth for each visit is the union of the rule images of its
//! diagnoses, plus a random carry-over of the previous visit's medications.
//! With `ddi_avoiding`, interacting medications are greedily dropped
//! (rule medications take precedence over carried-over ones, lower indices
//! over higher).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_dataset, CodeVocabulary, Dataset, DdiMatrix, PatientRecord, Visit};
use crate::error::{Error, Result};

/// Maps diagnosis indices to the medication sets they imply. Diagnoses
/// without an entry imply nothing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    pub images: BTreeMap<usize, BTreeSet<usize>>,
}

impl RuleTable {
    pub fn image(&self, diagnosis: usize) -> impl Iterator<Item = usize> + '_ {
        self.images.get(&diagnosis).into_iter().flatten().copied()
    }

    fn validate(&self, diagnoses: usize, medications: usize) -> Result<()> {
        for (&d, meds) in &self.images {
            if d >= diagnoses {
                return Err(Error::config(format!(
                    "rule for diagnosis {d} but only {diagnoses} diagnoses exist"
                )));
            }
            if let Some(&m) = meds.iter().find(|&&m| m >= medications) {
                return Err(Error::config(format!(
                    "rule {d} -> {m} but only {medications} medications exist"
                )));
            }
        }
        if self.images.values().all(BTreeSet::is_empty) {
            return Err(Error::config("rule table implies no medication at all"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub diagnoses: usize,
    pub procedures: usize,
    pub medications: usize,
    pub patients: usize,
    /// Mean of the geometric visit-count distribution before truncation.
    pub mean_visits: f64,
    pub max_visits: usize,
    /// Inclusive range of fresh diagnoses drawn per visit.
    pub diagnoses_per_visit: (usize, usize),
    pub procedures_per_visit: (usize, usize),
    /// Probability that a diagnosis recurs at the next visit.
    pub diagnosis_carryover: f64,
    /// Inclusive range of medications per generated rule.
    pub meds_per_rule: (usize, usize),
    /// Explicit rules; generated from the seed when absent.
    pub rules: Option<RuleTable>,
    /// Probability that each medication of the previous visit is carried over.
    pub persistence: f64,
    /// Probability that an unordered medication pair interacts.
    pub ddi_density: f64,
    pub ddi_avoiding: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            diagnoses: 60,
            procedures: 40,
            medications: 30,
            patients: 600,
            mean_visits: 2.4,
            max_visits: 10,
            diagnoses_per_visit: (2, 4),
            procedures_per_visit: (1, 3),
            diagnosis_carryover: 0.5,
            meds_per_rule: (1, 2),
            rules: None,
            persistence: 0.3,
            ddi_density: 0.05,
            ddi_avoiding: false,
            seed: 2023,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize), cap: usize| lo >= 1 && lo <= hi && hi <= cap;
        if self.diagnoses == 0 || self.procedures == 0 || self.medications == 0 {
            return Err(Error::config("vocabulary sizes must be positive"));
        }
        if self.patients == 0 {
            return Err(Error::config("patient count must be positive"));
        }
        if !(self.mean_visits >= 1.0) || self.max_visits == 0 {
            return Err(Error::config("mean visits must be >= 1 and max visits positive"));
        }
        if !range_ok(self.diagnoses_per_visit, self.diagnoses)
            || !range_ok(self.procedures_per_visit, self.procedures)
            || !range_ok(self.meds_per_rule, self.medications)
        {
            return Err(Error::config("per-visit or per-rule ranges exceed the vocabulary"));
        }
        for (name, p) in [
            ("diagnosis_carryover", self.diagnosis_carryover),
            ("persistence", self.persistence),
            ("ddi_density", self.ddi_density),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    fn generate_rules(&self, rng: &mut ChaCha8Rng) -> RuleTable {
        let mut images = BTreeMap::new();
        for d in 0..self.diagnoses {
            let k = rng.gen_range(self.meds_per_rule.0..=self.meds_per_rule.1);
            let meds = sample(rng, self.medications, k).into_iter().collect();
            images.insert(d, meds);
        }
        RuleTable { images }
    }

    /// The rule table in effect for this configuration.
    pub fn resolved_rules(&self) -> Result<RuleTable> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rules = match &self.rules {
            Some(r) => r.clone(),
            None => self.generate_rules(&mut rng),
        };
        rules.validate(self.diagnoses, self.medications)?;
        Ok(rules)
    }

    /// Generates the dataset in memory. Deterministic in `seed`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rules = match &self.rules {
            Some(r) => r.clone(),
            None => self.generate_rules(&mut rng),
        };
        rules.validate(self.diagnoses, self.medications)?;

        let mut pairs = Vec::new();
        for i in 0..self.medications {
            for j in i + 1..self.medications {
                if rng.gen_bool(self.ddi_density) {
                    pairs.push((i, j));
                }
            }
        }
        let ddi = DdiMatrix::from_unordered_pairs(self.medications, &pairs)?;
        let productive: Vec<usize> = rules
            .images
            .iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(&d, _)| d)
            .collect();

        let stop = 1.0 / self.mean_visits;
        let mut patients = Vec::with_capacity(self.patients);
        for pid in 0..self.patients {
            let mut length = 1;
            while length < self.max_visits && !rng.gen_bool(stop) {
                length += 1;
            }
            let mut visits: Vec<Visit> = Vec::with_capacity(length);
            for _ in 0..length {
                let prev = visits.last();
                let mut diags: BTreeSet<usize> = prev
                    .map(|v| {
                        v.diagnoses
                            .iter()
                            .copied()
                            .filter(|_| rng.gen_bool(self.diagnosis_carryover))
                            .collect()
                    })
                    .unwrap_or_default();
                let fresh = rng.gen_range(self.diagnoses_per_visit.0..=self.diagnoses_per_visit.1);
                for d in sample(&mut rng, self.diagnoses, fresh) {
                    diags.insert(d);
                }
                if !diags.iter().any(|&d| rules.image(d).next().is_some()) {
                    diags.insert(productive[rng.gen_range(0..productive.len())]);
                }

                let k = rng.gen_range(self.procedures_per_visit.0..=self.procedures_per_visit.1);
                let procs: Vec<usize> = sample(&mut rng, self.procedures, k).into_iter().collect();

                let ruled: BTreeSet<usize> = diags.iter().flat_map(|&d| rules.image(d)).collect();
                let carried: BTreeSet<usize> = prev
                    .map(|v| {
                        v.medications
                            .iter()
                            .copied()
                            .filter(|_| rng.gen_bool(self.persistence))
                            .collect()
                    })
                    .unwrap_or_default();
                let meds = if self.ddi_avoiding {
                    let mut kept: Vec<usize> = Vec::new();
                    for m in ruled.iter().chain(carried.difference(&ruled)) {
                        if kept.iter().all(|&k| !ddi.interacts(k, *m)) {
                            kept.push(*m);
                        }
                    }
                    kept
                } else {
                    ruled.union(&carried).copied().collect()
                };
                visits.push(Visit::new(diags.into_iter().collect(), procs, meds)?);
            }
            patients.push(PatientRecord::new(format!("P{pid:05}"), visits)?);
        }

        Ok(Dataset {
            vocab: CodeVocabulary::synthetic(self.diagnoses, self.procedures, self.medications),
            patients,
            ddi,
        })
    }
}

/// Generates a dataset and writes it to `dir`.
pub fn synth_generate(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<Dataset> {
    let ds = config.generate()?;
    save_dataset(dir, &ds)?;
    Ok(ds)
}
