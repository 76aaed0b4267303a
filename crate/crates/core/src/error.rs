use thiserror::Error;

use crate::netmodel::Region;

/// Errors produced anywhere in the scheduling pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed case document. `location` names the line and/or field.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A well-formed document that violates a model invariant.
    #[error("validation failed ({invariant}): {message}")]
    Validation { invariant: &'static str, message: String },

    #[error("unsupported generator cost for generator {generator}: {reason}")]
    UnsupportedCost { generator: usize, reason: String },

    #[error("singular network: {0}")]
    SingularNetwork(String),

    #[error("region {region} dispatch infeasible at q = {q} MW")]
    InfeasibleDispatch { region: Region, q: f64 },

    #[error("scenario {scenario} infeasible at q = {q} MW")]
    InfeasibleScenario { scenario: usize, q: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("iteration limit of {0} reached")]
    IterationLimit(usize),

    #[error("no feasible interchange for region {region}")]
    EmptyDomain { region: Region },

    #[error("q = {q} MW outside domain [{lo}, {hi}]")]
    OutOfDomain { q: f64, lo: f64, hi: f64 },

    #[error("curve domains do not overlap: {0}")]
    DomainMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tensor product of {scenarios} scenarios exceeds cap {cap} and Monte Carlo is disabled")]
    UnsupportedCombination { scenarios: usize, cap: usize },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(invariant: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            message: message.into(),
        }
    }

    /// Stable machine-readable tag for error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::UnsupportedCost { .. } => "unsupported_cost",
            Error::SingularNetwork(_) => "singular_network",
            Error::InfeasibleDispatch { .. } => "infeasible_dispatch",
            Error::InfeasibleScenario { .. } => "infeasible_scenario",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::IterationLimit(_) => "iteration_limit",
            Error::EmptyDomain { .. } => "empty_domain",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::DomainMismatch(_) => "domain_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnsupportedCombination { .. } => "unsupported_combination",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
