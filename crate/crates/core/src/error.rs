use thiserror::Error;

/// Errors raised by the operator, solver and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("field is identically zero")]
    ZeroField,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("function is tagged non-smooth; singular integral not defined at this point")]
    NonSmooth,

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("extrapolation did not converge: {0}")]
    NonConvergent(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("geometry or mesh under-resolved: {0}")]
    UnderResolved(String),

    #[error("field is not band-limited to l_max = {l_max} (synthesis defect {defect:.3e})")]
    Aliasing { l_max: usize, defect: f64 },

    #[error("profile is not O(r^l) near the origin: {0}")]
    Growth(String),

    #[error("integral diverges on [{lo}, {hi}]")]
    Divergence { lo: f64, hi: f64 },

    #[error("profile left the admissible band at coordinate {at}")]
    BlowUp { at: f64 },

    #[error("step budget of {0} exceeded")]
    StepBudget(u64),

    #[error("insufficient paths: {0}")]
    InsufficientPaths(String),

    #[error("evaluation point outside the sampled field: {0}")]
    OffGrid(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
