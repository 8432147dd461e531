use thiserror::Error;

/// Coarse grouping of failures, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed model or input vector.
    Invalid,
    /// The requested computation does not apply to this model.
    NotApplicable,
    /// A numerical procedure failed to meet its contract.
    Numerical,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mean generator is reducible; no unique positive eigentriple")]
    Reducible,

    #[error("eigentriple did not converge: residual {residual:e} after {iterations} iterations")]
    EigenNotConverged { residual: f64, iterations: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("step size underflow at t = {t} (stiff or singular flow)")]
    StepUnderflow { t: f64 },

    #[error("clamp of {excess:e} beyond [0, 1] at t = {t}")]
    ClampFault { t: f64, excess: f64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    QuadratureNotConverged { achieved: f64, requested: f64 },

    #[error("theta ladder did not converge: last difference {difference:e} at theta = {theta:e}")]
    LadderNotConverged { theta: f64, difference: f64 },

    #[error("population cap {cap} exceeded at t = {time}")]
    Explosion { time: f64, cap: u64 },

    #[error("conditional estimate undefined: no surviving replicates")]
    NoSurvivors,

    #[error("no stationary law: the immigration integral diverges")]
    NoStationaryLaw,

    #[error("tail of the stationary integral not certified: bound {bound:e} at horizon {horizon}")]
    TailNotCertified { bound: f64, horizon: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidModel(_) | Error::InvalidInput(_) => ErrorClass::Invalid,
            Error::Reducible | Error::NotApplicable(_) | Error::NoStationaryLaw => {
                ErrorClass::NotApplicable
            }
            _ => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
