use thiserror::Error;

#[derive(Debug, Error)]
pub enum SalemError {
    #[error("invalid pauli string {0:?}")]
    InvalidPauli(String),
    #[error("qubit count mismatch: expected {expected}, got {got}")]
    QubitMismatch { expected: usize, got: usize },
    #[error("channel is singular (eigenvalue {eigenvalue:e} for {basis}); route these syndromes to rejection")]
    SingularChannel { basis: String, eigenvalue: f64 },
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("unrealizable syndrome record {0}")]
    UnknownSyndrome(String),
    #[error("accepted subset S0 is empty")]
    EmptyAcceptedSubset,
    #[error("every shot of {method} at V = {volume} was rejected")]
    NoAcceptedShots { method: String, volume: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no root found in [{lo:e}, {hi:e}] after bracket expansion")]
    NoRoot { lo: f64, hi: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("table not found: {0}")]
    MissingTable(String),
    #[error("missing fit input: {0}")]
    MissingFit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SalemError>;
