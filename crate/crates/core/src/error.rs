use thiserror::Error;

use crate::quadrature::QuadError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integrability check failed: {0}")]
    Integrability(String),

    #[error(transparent)]
    Quadrature(#[from] QuadError),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("divergent tail integral: {0}")]
    DivergentTail(String),

    #[error("ODE solver: {0}")]
    Ode(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("distribution: {0}")]
    Distribution(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
