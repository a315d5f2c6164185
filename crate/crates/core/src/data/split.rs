use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::error::{Error, Result};

/// Patient-level train / validation / test partition (by patient id).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles patients with a seeded generator and cuts the shuffled list into
/// train, validation and test blocks of proportions `ratios`. Validation and
/// test sizes are floored (but at least one patient each when their ratio is
/// non-zero); the remainder goes to train.
pub fn split_dataset(records: &[PatientRecord], ratios: [u32; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios[0] == 0 || ratios.iter().any(|&r| r > 1_000_000) {
        return Err(Error::config(format!("invalid split ratios {ratios:?}")));
    }
    let parts = ratios.iter().filter(|&&r| r > 0).count();
    let n = records.len();
    if n < parts {
        return Err(Error::config(format!("{n} patients cannot fill {parts} partitions")));
    }
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let size = |r: u32| -> usize {
        if r == 0 {
            0
        } else {
            ((n as u64 * r as u64 / total) as usize).max(1)
        }
    };
    let (n_val, n_test) = (size(ratios[1]), size(ratios[2]));
    let n_train = n - n_val - n_test;

    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
    })
}
