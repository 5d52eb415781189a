use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),
    #[error("series or continued fraction failed to converge: {0}")]
    Convergence(String),
    #[error("truncation did not stabilise: {0}")]
    Truncation(String),
    #[error("step size underflow in ODE integration: {0}")]
    Stiffness(String),
    #[error("area weight vanishes at x = {0}")]
    WeightZero(f64),
    #[error("invalid diffusion specification: {0}")]
    InvalidSpec(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("scale tail classification inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Syntax(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
