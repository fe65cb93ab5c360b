//! Unified error type for the toolkit.
//!
//! Every rejection named by an operation contract maps to a distinct variant so
//! callers (and tests) can match on the cause rather than parse strings.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tap {0} cannot be resolved: {1}")]
    TapUnresolvable(String, String),

    #[error("snapshot is empty (no tokens or no channels)")]
    EmptySnapshot,

    #[error("non-finite value encountered at {0}")]
    NonFinite(String),

    #[error("channel statistics need at least two tokens; snapshot has one")]
    SingleToken,

    #[error("channel statistics need at least two channels; matrix has one")]
    SingleChannel,

    #[error("token {0} has zero standardization denominator")]
    DegenerateToken(usize),

    #[error("gamma length {got} does not match channel count {expected}")]
    GammaLength { expected: usize, got: usize },

    #[error("layernorm decomposition requires a beta shift vector")]
    BetaRequired,

    #[error("rmsnorm decomposition does not take a beta shift vector")]
    BetaUnexpected,

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("duplicate indices in plan")]
    DuplicateIndices,

    #[error("events do not originate from the planned site: {0}")]
    SiteMismatch(String),

    #[error("profiles come from different passes: {0}")]
    ProvenanceMismatch(String),

    #[error("cannot draw {count} channels from {total} with {excluded} excluded")]
    InfeasibleSample {
        total: usize,
        count: usize,
        excluded: usize,
    },

    #[error("no samples to evaluate")]
    EmptySamples,

    #[error("corpus supports only {available} samples, {requested} requested")]
    CorpusTooSmall { available: usize, requested: usize },

    #[error("sequence length {len} exceeds model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("unknown weight name: {0}")]
    WeightUnknown(String),

    #[error("ledger entry not found: {0}")]
    LedgerEntryNotFound(String),

    #[error("activation dump is malformed: {0}")]
    DumpMalformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
