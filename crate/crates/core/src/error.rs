use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid rule `{rule}`: {message}")]
    InvalidRule { rule: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty vocabulary after pruning tokens with count < {min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("query vector has zero norm")]
    ZeroNormQuery,

    #[error("feature dimension mismatch: model expects {expected}, got feature index {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training set contains a single class")]
    SingleClass,

    #[error("non-finite feature value in example {0}")]
    NonFiniteFeature(usize),

    #[error("histogram bins are not aligned")]
    MisalignedBins,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate marginals: expected agreement is 1 but observed agreement is {observed}")]
    DegenerateKappa { observed: f64 },

    #[error("not enough eligible documents: requested {requested}, available {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("strategy {0} requires a trained classifier")]
    ModelRequired(&'static str),

    #[error("unknown round {0}")]
    UnknownRound(u64),

    #[error("bad model file: {0}")]
    BadModelFile(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
