use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("not dissipative: {0}")]
    NotDissipative(String),
    #[error("not coercive: {0}")]
    NotCoercive(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("closure block A22 is singular; the algebraic part cannot be solved for x2 (try subspace reduction)")]
    ClosureSingular,
    #[error("reduction is not well defined: {0}")]
    NotWellDefined(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unsupported boundary family: {0}")]
    UnsupportedBoundary(String),
    #[error("step matrix singular for tau = {tau}; choose a different step size")]
    ResonantStep { tau: f64 },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
