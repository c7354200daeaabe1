//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("admissibility violated: q'({rho}) = {dq} <= 0 (requires p'(rho) - (a*mu/b)*rho > 0)")]
    AdmissibilityViolation { rho: f64, dq: f64 },

    #[error("non-positive density {0}")]
    NonpositiveDensity(f64),

    #[error("shooting failed: {0}")]
    ShootingFailed(String),

    #[error("tolerance not met: achieved {achieved:e}, required {tol:e}")]
    ToleranceNotMet { achieved: f64, tol: f64 },

    #[error("insufficient tail: profile deviation below floating-point floor in fit window")]
    InsufficientTail,

    #[error("derivative order (k={k}, l={l}) not supported")]
    OrderUnsupported { k: usize, l: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("perturbation drives density to {rho} at x = {x}")]
    VacuumInducingPerturbation { x: f64, rho: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("vacuum detected at t = {t}, cell {index}: rho = {rho}")]
    VacuumDetected { t: f64, index: usize, rho: f64 },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("degenerate wave: rho_minus == rho_plus")]
    DegenerateWave,

    #[error("residual mass {residual:e} exceeds tolerance {tol:e}")]
    ResidualMassTooLarge { residual: f64, tol: f64 },

    #[error("energy weight too small: alpha*k_e = {0} <= 1")]
    WeightTooSmall(f64),

    #[error("non-positive value at sample {0}")]
    NonpositiveValues(usize),

    #[error("fit window too narrow: {0}")]
    WindowTooNarrow(String),

    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("validation error in `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error("missing series `{0}`")]
    MissingSeries(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::AdmissibilityViolation { .. }
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::DomainTooSmall(_)
            | Error::WeightTooSmall(_)
            | Error::OrderUnsupported { .. }
            | Error::VacuumInducingPerturbation { .. } => 2,
            Error::Io(_) | Error::Csv(_) => 4,
            _ => 3,
        }
    }
}
