//! Clone-majority fate labels and supervised pair construction.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CloneMatrix, DataError, ExpressionMatrix, Fate, FateLabels, PairProvenance, PairedDataset};

/// Outcome of the per-clone majority vote over labeled day-4/6 members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloneVote {
    Majority(Fate),
    Tie,
    Unlabeled,
}

/// Majority fate of every clone among its labeled day-4/6 members.
pub fn clone_majorities(clones: &CloneMatrix, day46_labels: &FateLabels) -> Vec<CloneVote> {
    let mut counts = vec![(0usize, 0usize); clones.n_clones()];
    for &(c, k) in &clones.entries {
        match day46_labels.get(&clones.cell_ids[c]) {
            Some(Fate::Monocyte) => counts[k].0 += 1,
            Some(Fate::Neutrophil) => counts[k].1 += 1,
            None => {}
        }
    }
    counts
        .into_iter()
        .map(|(mono, neu)| match (mono, neu) {
            (0, 0) => CloneVote::Unlabeled,
            (m, n) if m > n => CloneVote::Majority(Fate::Monocyte),
            (m, n) if n > m => CloneVote::Majority(Fate::Neutrophil),
            _ => CloneVote::Tie,
        })
        .collect()
}

/// Day-2 labels from clone majorities, with the cells that could not be labeled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Day2Labels {
    pub labels: FateLabels,
    /// cells whose clone splits evenly between fates
    pub excluded_ties: Vec<String>,
    /// cells with no clone, or whose clone has no labeled day-4/6 member
    pub excluded_unlabeled: Vec<String>,
}

pub fn assign_day2_labels(
    day2: &ExpressionMatrix,
    clones: &CloneMatrix,
    day46_labels: &FateLabels,
) -> Day2Labels {
    let votes = clone_majorities(clones, day46_labels);
    let clone_of = clones.clone_of();
    let mut out = Day2Labels::default();
    for id in &day2.cell_ids {
        match clone_of.get(id.as_str()).map(|&k| votes[k]) {
            Some(CloneVote::Majority(f)) => {
                out.labels.insert(id.clone(), f);
            }
            Some(CloneVote::Tie) => out.excluded_ties.push(id.clone()),
            _ => out.excluded_unlabeled.push(id.clone()),
        }
    }
    out
}

/// Eligible day-2 cells and their candidate partners under the majority rule.
#[derive(Debug, Clone)]
pub struct PairingPool {
    /// `(day-2 row, candidate day-4/6 rows)`, in day-2 row order
    candidates: Vec<(usize, Vec<usize>)>,
}

impl PairingPool {
    /// Candidates for each day-2 cell: same-clone day-4/6 cells of the clone's
    /// majority fate. Clones with tied or absent votes contribute nothing.
    pub fn new(
        day2: &ExpressionMatrix,
        day46: &ExpressionMatrix,
        clones: &CloneMatrix,
        day46_labels: &FateLabels,
    ) -> Self {
        let votes = clone_majorities(clones, day46_labels);
        let clone_of = clones.clone_of();
        let mut by_clone: HashMap<usize, Vec<usize>> = HashMap::new();
        for (j, id) in day46.cell_ids.iter().enumerate() {
            let (Some(&k), Some(&fate)) = (clone_of.get(id.as_str()), day46_labels.get(id)) else {
                continue;
            };
            if votes[k] == CloneVote::Majority(fate) {
                by_clone.entry(k).or_default().push(j);
            }
        }
        let candidates = day2
            .cell_ids
            .iter()
            .enumerate()
            .filter_map(|(i, id)| {
                let k = clone_of.get(id.as_str())?;
                let partners = by_clone.get(k)?;
                Some((i, partners.clone()))
            })
            .collect();
        Self { candidates }
    }

    /// Keeps only the listed day-2 rows and day-4/6 partner rows.
    pub fn restrict(&self, day2_rows: &[usize], day46_rows: &[usize]) -> Self {
        let keep2: std::collections::HashSet<_> = day2_rows.iter().copied().collect();
        let keep46: std::collections::HashSet<_> = day46_rows.iter().copied().collect();
        let candidates = self
            .candidates
            .iter()
            .filter(|(i, _)| keep2.contains(i))
            .filter_map(|(i, ps)| {
                let ps: Vec<usize> = ps.iter().copied().filter(|j| keep46.contains(j)).collect();
                (!ps.is_empty()).then_some((*i, ps))
            })
            .collect();
        Self { candidates }
    }

    pub fn n_eligible(&self) -> usize {
        self.candidates.len()
    }

    /// Samples `n_pairs` day-2 cells without replacement, each with one
    /// uniformly drawn partner.
    ///
    /// For a fixed seed the selection for a smaller `n_pairs` is a prefix of
    /// the selection for a larger one.
    pub fn sample(&self, n_pairs: usize, seed: u64) -> Result<PairedDataset, DataError> {
        if n_pairs > self.candidates.len() {
            return Err(DataError::Capacity { requested: n_pairs, max: self.candidates.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.shuffle(&mut rng);
        let all: Vec<(usize, usize)> = order
            .iter()
            .map(|&c| {
                let (i, ps) = &self.candidates[c];
                (*i, ps[rng.random_range(0..ps.len())])
            })
            .collect();
        Ok(PairedDataset {
            pairs: all[..n_pairs].to_vec(),
            provenance: PairProvenance { rule: "clone-majority-uniform".into(), seed },
        })
    }
}

/// Samples `n_pairs` supervised pairs under the clone majority rule.
pub fn build_pairs(
    day2: &ExpressionMatrix,
    day46: &ExpressionMatrix,
    clones: &CloneMatrix,
    day46_labels: &FateLabels,
    n_pairs: usize,
    seed: u64,
) -> Result<PairedDataset, DataError> {
    PairingPool::new(day2, day46, clones, day46_labels).sample(n_pairs, seed)
}

/// Checks every pair: indices in range, shared clone, partner in the clone's majority fate.
pub fn check_pairs(
    pairs: &PairedDataset,
    day2: &ExpressionMatrix,
    day46: &ExpressionMatrix,
    clones: &CloneMatrix,
    day46_labels: &FateLabels,
) -> Result<(), DataError> {
    let votes = clone_majorities(clones, day46_labels);
    let clone_of = clones.clone_of();
    for (n, &(i, j)) in pairs.pairs.iter().enumerate() {
        let bad = |msg: &str| DataError::Invalid(format!("pair {n} ({i}, {j}): {msg}"));
        let (Some(a), Some(b)) = (day2.cell_ids.get(i), day46.cell_ids.get(j)) else {
            return Err(bad("index out of range"));
        };
        let (Some(&ka), Some(&kb)) = (clone_of.get(a.as_str()), clone_of.get(b.as_str())) else {
            return Err(bad("cell without clone"));
        };
        if ka != kb {
            return Err(bad("cells belong to different clones"));
        }
        match (votes[ka], day46_labels.get(b)) {
            (CloneVote::Majority(f), Some(&g)) if f == g => {}
            _ => return Err(bad("partner is not in the clone's majority fate")),
        }
    }
    Ok(())
}
