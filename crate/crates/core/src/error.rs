use num_complex::Complex64;
use thiserror::Error;

/// Failures raised by the numerical routines of this crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PvError {
    #[error("invalid period ratio: Im tau = {im_tau} must be positive")]
    InvalidNome { im_tau: f64 },

    #[error("theta series needs {needed} terms, above the cap of {cap}; lattice-reduce the argument first")]
    TruncationCap { needed: usize, cap: usize },

    #[error("argument {z} is within tolerance of a theta zero")]
    NearThetaZero { z: Complex64 },

    #[error("{what} pole at {at}")]
    AtPole { what: &'static str, at: Complex64 },

    #[error("point {z} lies within {distance:e} of branch point {branch_point} (safety radius {radius:e})")]
    BranchPointProximity {
        z: Complex64,
        branch_point: Complex64,
        distance: f64,
        radius: f64,
    },

    #[error("modulus degenerates: A = {a}")]
    DegenerateModulus { a: Complex64 },

    #[error("quadrature did not converge: estimated error {estimate:e}")]
    QuadratureNotConverged { estimate: f64 },

    #[error("{what}: no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{what} near {at}: {detail}")]
    Singular {
        what: &'static str,
        at: Complex64,
        detail: String,
    },

    #[error("integrator step collapsed at t = {t}")]
    StepCollapse { t: Complex64 },

    #[error("too many detours ({count}) before t = {t}")]
    TooManyDetours { count: usize, t: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("window [{lo}, {hi}] holds {count} samples, need at least {needed}")]
    InsufficientSamples {
        lo: f64,
        hi: f64,
        count: usize,
        needed: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PvError>;
