use std::fmt;

use thiserror::Error;

use crate::fixed_point::ContractionReport;

/// State of an order-doubling or level-refining quadrature that failed to
/// meet its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDiagnostics {
    pub method: &'static str,
    pub estimate: f64,
    pub previous: f64,
    pub tolerance: f64,
    /// Number of nodes (Gauss rules) or refinement level (tanh-sinh) reached.
    pub resolution: usize,
}

impl fmt::Display for QuadratureDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} stopped at resolution {} with estimate {:e} (previous {:e}, |diff| {:e} > tol {:e})",
            self.method,
            self.resolution,
            self.estimate,
            self.previous,
            (self.estimate - self.previous).abs(),
            self.tolerance
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{func}: argument {arg} outside domain {domain}")]
    Domain {
        func: &'static str,
        arg: f64,
        domain: &'static str,
    },

    #[error("kernel is singular at y = {y}; use an open quadrature rule")]
    Singular { y: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(QuadratureDiagnostics),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error(
        "fixed-point iteration stopped contracting on [0, {t_horizon}] after {} iterations",
        report.iterations
    )]
    NonContraction {
        t_horizon: f64,
        report: Box<ContractionReport>,
    },
}

/// Coarse error class, used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Argument,
    Numeric,
    Resource,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain { .. } | Error::Argument(_) => ErrorClass::Argument,
            Error::Singular { .. }
            | Error::Quadrature(_)
            | Error::Numeric(_)
            | Error::NonContraction { .. } => ErrorClass::Numeric,
            Error::Resource(_) => ErrorClass::Resource,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
