use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum ConewaveError {
    #[error("atom frequency outside the admissible sector/band: {0}")]
    AtomOutsideSector(String),
    #[error("frequency not on the torus lattice: {0}")]
    OffLattice(String),
    #[error("operation requires a nonempty wave")]
    EmptyWave,
    #[error("margin too small: have {have}, need {need}")]
    MarginTooSmall { have: f64, need: f64 },
    #[error("disk radius {radius} below minimum {min}")]
    DiskTooSmall { radius: f64, min: f64 },
    #[error("region exceeds torus bounds: {0}")]
    RegionExceedsTorus(String),
    #[error("region is unbounded; intersect with a cube first")]
    UnboundedRegion,
    #[error("assignment rows must sum to 1: worst row sum {0}")]
    RowSumViolation(f64),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("multiplier symbol below floor {floor:e} at joint atom (value {value:e})")]
    SingularSymbol { value: f64, floor: f64 },
    #[error("waves live on different torus domains")]
    MixedDomains,
    #[error("rescaling parameter l must be a non-negative integer")]
    NegativeL,
    #[error("family member has energy {0}, expected 1 within 1e-6")]
    EnergyNotNormalized(f64),
    #[error("wave family spec is infeasible: {0}")]
    InfeasibleSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ConewaveError>;
