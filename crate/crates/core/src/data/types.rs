use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::math::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Timepoint {
    Day2,
    Day4_6,
}

impl Timepoint {
    pub fn code(self) -> u8 {
        match self {
            Timepoint::Day2 => 2,
            Timepoint::Day4_6 => 46,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            2 => Some(Timepoint::Day2),
            46 => Some(Timepoint::Day4_6),
            _ => None,
        }
    }
}

impl fmt::Display for Timepoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timepoint::Day2 => "day2",
            Timepoint::Day4_6 => "day4_6",
        })
    }
}

/// Differentiated fate of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fate {
    Monocyte,
    Neutrophil,
}

impl Fate {
    /// Binary encoding used by classifiers: Neutrophil = 1.
    pub fn as_binary(self) -> f64 {
        match self {
            Fate::Monocyte => 0.0,
            Fate::Neutrophil => 1.0,
        }
    }

    pub fn from_binary(positive: bool) -> Self {
        if positive {
            Fate::Neutrophil
        } else {
            Fate::Monocyte
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Fate::Monocyte => [1.0, 0.0],
            Fate::Neutrophil => [0.0, 1.0],
        }
    }

    pub fn other(self) -> Self {
        match self {
            Fate::Monocyte => Fate::Neutrophil,
            Fate::Neutrophil => Fate::Monocyte,
        }
    }
}

impl fmt::Display for Fate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fate::Monocyte => "Monocyte",
            Fate::Neutrophil => "Neutrophil",
        })
    }
}

impl FromStr for Fate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "monocyte" | "mono" => Ok(Fate::Monocyte),
            "neutrophil" | "neu" => Ok(Fate::Neutrophil),
            other => Err(format!("unknown fate `{other}`")),
        }
    }
}

/// Fate labels keyed by cell ID.
pub type FateLabels = BTreeMap<String, Fate>;

/// Dense cells × genes expression values with their IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub values: Tensor,
    pub cell_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub timepoint: Timepoint,
}

impl ExpressionMatrix {
    pub fn new(
        values: Tensor,
        cell_ids: Vec<String>,
        gene_ids: Vec<String>,
        timepoint: Timepoint,
    ) -> Result<Self, DataError> {
        if values.rows() != cell_ids.len() || values.cols() != gene_ids.len() {
            return Err(DataError::Invalid(format!(
                "{}x{} values with {} cell IDs and {} gene IDs",
                values.rows(),
                values.cols(),
                cell_ids.len(),
                gene_ids.len()
            )));
        }
        if !values.is_finite() {
            return Err(DataError::Invalid("expression values must be finite".into()));
        }
        check_unique("cell", &cell_ids)?;
        check_unique("gene", &gene_ids)?;
        Ok(Self { values, cell_ids, gene_ids, timepoint })
    }

    pub fn n_cells(&self) -> usize {
        self.values.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.cols()
    }

    /// Restricts to the given rows, keeping IDs aligned.
    pub fn subset(&self, rows: &[usize]) -> ExpressionMatrix {
        ExpressionMatrix {
            values: self.values.select_rows(rows),
            cell_ids: rows.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
            timepoint: self.timepoint,
        }
    }

    pub fn with_values(&self, values: Tensor) -> Result<ExpressionMatrix, DataError> {
        ExpressionMatrix::new(values, self.cell_ids.clone(), self.gene_ids.clone(), self.timepoint)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.cell_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
    }
}

fn check_unique(kind: &str, ids: &[String]) -> Result<(), DataError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DataError::Invalid(format!("duplicate {kind} ID `{id}`")));
        }
    }
    Ok(())
}

/// Binary cell × clone membership.
#[derive(Debug, Clone, PartialEq)]
pub struct CloneMatrix {
    pub cell_ids: Vec<String>,
    pub clone_ids: Vec<String>,
    /// `(cell index, clone index)` for every 1 entry
    pub entries: Vec<(usize, usize)>,
}

impl CloneMatrix {
    /// Builds the matrix from `(cell_id, clone_id)` memberships.
    ///
    /// Rejects cells listed in more than one clone, naming them.
    pub fn from_memberships<I, A, B>(memberships: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut cell_ids = Vec::new();
        let mut clone_ids = Vec::new();
        let mut cell_ix: HashMap<String, usize> = HashMap::new();
        let mut clone_ix: HashMap<String, usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (cell, clone) in memberships {
            let (cell, clone) = (cell.into(), clone.into());
            let ci = *cell_ix.entry(cell.clone()).or_insert_with(|| {
                cell_ids.push(cell.clone());
                cell_ids.len() - 1
            });
            let k = *clone_ix.entry(clone.clone()).or_insert_with(|| {
                clone_ids.push(clone.clone());
                clone_ids.len() - 1
            });
            if seen.insert((ci, k)) {
                entries.push((ci, k));
            }
        }
        let m = CloneMatrix { cell_ids, clone_ids, entries };
        let multi = m.multi_clone_cells();
        if !multi.is_empty() {
            return Err(DataError::MultiClone(multi));
        }
        Ok(m)
    }

    fn multi_clone_cells(&self) -> Vec<String> {
        let mut count = vec![0usize; self.cell_ids.len()];
        for &(c, _) in &self.entries {
            count[c] += 1;
        }
        count
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 1)
            .map(|(i, _)| self.cell_ids[i].clone())
            .collect()
    }

    pub fn n_clones(&self) -> usize {
        self.clone_ids.len()
    }

    /// Clone index of every cell ID that belongs to a clone.
    pub fn clone_of(&self) -> HashMap<&str, usize> {
        self.entries.iter().map(|&(c, k)| (self.cell_ids[c].as_str(), k)).collect()
    }

    /// Member cell IDs per clone, in entry order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.clone_ids.len()];
        for &(c, k) in &self.entries {
            out[k].push(self.cell_ids[c].as_str());
        }
        out
    }
}

/// Supervised (day-2, day-4/6) pairs by row index into the two matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub pairs: Vec<(usize, usize)>,
    pub provenance: PairProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub rule: String,
    pub seed: u64,
}

impl PairedDataset {
    pub fn empty() -> Self {
        Self { pairs: Vec::new(), provenance: PairProvenance { rule: "none".into(), seed: 0 } }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
