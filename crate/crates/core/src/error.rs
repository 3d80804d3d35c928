use thiserror::Error;

/// Errors raised by model construction, simulation and the samplers.
#[derive(Debug, Error)]
pub enum SkmError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid observation model: {0}")]
    InvalidObservationModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reaction {reaction} would drive species {species} negative")]
    InvalidTransition { reaction: usize, species: usize },

    #[error("non-finite hazard for reaction {reaction}")]
    NonFiniteHazard { reaction: usize },

    #[error("event cap of {cap} exceeded within a single interval")]
    EventCapExceeded { cap: u64 },

    #[error("particle filter degenerated; no path can be drawn")]
    DegenerateFilter,

    #[error("all importance weights are zero")]
    DegeneratePopulation,

    #[error("acceptance ratio undefined: current and candidate both have zero density")]
    ChainOutsideSupport,

    #[error("initialisation failed after {0} prior draws with zero likelihood")]
    InitializationFailed(usize),

    #[error("proposal density is zero at one of its own draws")]
    ProposalSupport,

    #[error("autocorrelation undefined for a constant chain")]
    ZeroVariance,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SkmError> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SkmError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
