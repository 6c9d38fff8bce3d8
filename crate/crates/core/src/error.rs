use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular spectral parameter omega = {0}")]
    SingularParameter(Complex64),

    #[error("point outside the domain: {0}")]
    OutOfDomain(String),

    #[error("channel is not subcritical at lambda = {lambda}: margin {margin:.6}")]
    NotSubcritical { lambda: f64, margin: f64 },

    #[error("root solve did not converge: {0}")]
    Convergence(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ill-conditioned system: condition estimate {0:.3e}")]
    IllConditioned(f64),

    #[error("support violation: {0}")]
    Support(String),

    #[error("unreliable result: {0}")]
    Unreliable(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("logarithm branch cut hit at {0}")]
    BranchCut(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::SingularParameter(_) => "singular_parameter",
            Error::OutOfDomain(_) => "out_of_domain",
            Error::NotSubcritical { .. } => "not_subcritical",
            Error::Convergence(_) => "convergence",
            Error::Shape(_) => "shape",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::Support(_) => "support",
            Error::Unreliable(_) => "unreliable",
            Error::Invalid(_) => "invalid",
            Error::BranchCut(_) => "branch_cut",
        }
    }
}
