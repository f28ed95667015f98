use std::path::PathBuf;

use thiserror::Error;

use crate::mvts::{BinaryTask, FlareClass};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance not in task universe: class {class} is neither positive nor negative under {task}")]
    NotInTaskUniverse { class: FlareClass, task: BinaryTask },

    #[error("unknown parameter name(s): {}", .0.join(", "))]
    UnknownParameters(Vec<String>),

    #[error("undefined imbalance ratio: dataset has no positive instances for {0}")]
    UndefinedRatio(BinaryTask),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unrecognized flare class label {0:?}")]
    UnknownFlareClass(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV in {path} (instance {instance_id}): {message}")]
    MalformedCsv {
        path: PathBuf,
        instance_id: String,
        message: String,
    },

    #[error("instance {instance_id} has shape {found}, expected {expected}")]
    InconsistentShape {
        instance_id: String,
        expected: String,
        found: String,
    },

    #[error("instance {instance_id}: parameter {parameter} has no finite values")]
    MissingParameterRow {
        instance_id: String,
        parameter: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parameter mismatch: expected {expected:?}, found {found:?}")]
    ParameterMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("cannot undersample: {positives} positives exceed {negatives} negatives")]
    UndersampleDirection { positives: usize, negatives: usize },

    #[error("sample plan for class {class} needs {target} instances but only {available} exist")]
    PlanExceedsPopulation {
        class: FlareClass,
        target: usize,
        available: usize,
    },

    #[error("need at least {needed} vectors, got {found}")]
    TooFewVectors { needed: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("SVM did not converge after {iterations} iterations (max KKT violation {max_violation:e})")]
    NotConverged {
        iterations: usize,
        max_violation: f64,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("undefined skill score: {0}")]
    UndefinedSkill(&'static str),

    #[error("{stage} failed (contamination {contamination}, trial {trial}): {source}")]
    Stage {
        stage: &'static str,
        contamination: f64,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure during computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_)
            | Error::UnknownParameters(_)
            | Error::UnknownFlareClass(_)
            | Error::Io { .. }
            | Error::MalformedCsv { .. }
            | Error::InconsistentShape { .. }
            | Error::MissingParameterRow { .. }
            | Error::InvalidDataset(_)
            | Error::Json { .. } => true,
            _ => false,
        }
    }
}
