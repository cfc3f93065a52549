//! Evaluation tooling: synthetic traffic, validity checks, baseline
//! responders, cross-validation and timing.

pub mod bench;
pub mod crossval;
pub mod responders;
pub mod synth;
pub mod validator;

use thiserror::Error;

use crate::clusterer::ClusterError;
use crate::emulator::EmulatorError;
use crate::protomodel::ModelError;
use crate::seqalign::AlignError;

pub use bench::{benchmark, BenchmarkReport, ResponderTiming};
pub use crossval::{cross_validate, fold_assignment, AccuracyReport, CrossValidation, FoldResult};
pub use responders::{
    hash_lookup_responder, train, whole_library_responder, HashLookup, Responder, ResponderKind, WholeLibrary,
};
pub use synth::{directory_example_library, synthetic_library, LabelledLibrary, SyntheticProtocolSpec};
pub use validator::{directory_validator, DirectoryValidator, Reason, ValidationOutcome, Validator, Verdict};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("transaction library is empty")]
    EmptyLibrary,
    #[error("{n} transactions cannot be split into {folds} folds")]
    TooFewTransactions { n: usize, folds: usize },
    #[error("{0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error(transparent)]
    Align(#[from] AlignError),
}
