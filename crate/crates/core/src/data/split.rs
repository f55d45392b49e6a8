use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, PairedDataset};

/// Disjoint train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`; the first `round(n·fraction)` rows train.
///
/// With `n ≥ 2` both sides are kept nonempty.
pub fn split_train_test(n: usize, fraction: f64, seed: u64) -> Result<Split, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!("train fraction {fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

impl PairedDataset {
    /// Pairs whose day-2 member is in `train_rows`.
    pub fn restrict_to(&self, train_rows: &[usize]) -> PairedDataset {
        let keep: std::collections::HashSet<_> = train_rows.iter().collect();
        PairedDataset {
            pairs: self.pairs.iter().copied().filter(|(i, _)| keep.contains(i)).collect(),
            provenance: self.provenance.clone(),
        }
    }
}
