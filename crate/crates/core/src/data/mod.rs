//! Datasets: expression matrices, clone memberships, fate labels, supervised
//! pairs, splits and the synthetic generator.

mod io;
mod pairs;
mod split;
mod synth;
mod types;

pub use io::{
    load_clones, load_expression, load_labels, write_clones, write_expression, write_labels,
    MatrixFormat,
};
pub use pairs::{
    assign_day2_labels, build_pairs, check_pairs, clone_majorities, CloneVote, Day2Labels,
    PairingPool,
};
pub use split::{split_train_test, Split};
pub use synth::{synth_branching, SynthConfig, SynthDataset};
pub use types::{
    CloneMatrix, ExpressionMatrix, Fate, FateLabels, PairProvenance, PairedDataset, Timepoint,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("cells listed in more than one clone: {}", .0.join(", "))]
    MultiClone(Vec<String>),
    #[error("requested {requested} pairs but only {max} day-2 cells are eligible")]
    Capacity { requested: usize, max: usize },
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io(e.to_string()),
            _ => DataError::Parse { path: String::new(), line, msg: e.to_string() },
        }
    }
}
