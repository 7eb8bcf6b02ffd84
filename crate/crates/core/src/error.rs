use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("address length u={0} is outside 1..=63")]
    AddressLength(u32),

    #[error("device id {value} does not fit in {u} bits")]
    IdOutOfRange { value: u64, u: u32 },

    #[error("query of length {len} exceeds the address length u={u}")]
    QueryTooLong { len: u32, u: u32 },

    #[error("duplicate device id {0}")]
    DuplicateId(String),

    #[error("invalid bit string {0:?}")]
    InvalidBits(String),

    /// Argument outside the domain of a bound formula or oracle.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("step requested after the resolution terminated")]
    AlreadyTerminated,

    #[error("enumerating {subsets} subsets exceeds the budget of {budget}; use sampled mode")]
    OverBudget { subsets: u128, budget: u128 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("malformed codebook file: {0}")]
    CodebookFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
