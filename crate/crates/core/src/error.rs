use thiserror::Error;

/// Errors raised by the varifold, curvature, energy, transport and flow layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("mesh not closed: edge ({0}, {1}) is shared by {2} faces")]
    NotClosed(usize, usize, usize),

    #[error("mesh not consistently oriented: directed edge ({0}, {1}) appears twice")]
    Inconsistent(usize, usize),

    #[error("euler characteristic {chi} does not match genus {genus} (expected {expected})")]
    EulerMismatch { chi: i64, genus: u32, expected: i64 },

    #[error("degenerate face {face}: area {area:e} below threshold {threshold:e}")]
    DegenerateFace { face: usize, area: f64, threshold: f64 },

    #[error("vertex {vertex}: zero mixed area")]
    ZeroMixedArea { vertex: usize },

    #[error("vertex {vertex}: inconsistent discrete curvature, |H|^2 - 2K = {value:e}")]
    InconsistentCurvature { vertex: usize, value: f64 },

    #[error("vertex {vertex}: integrand is not finite ({value})")]
    NonFinite { vertex: usize, value: f64 },

    #[error("mass mismatch: source {source_mass} vs target {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("network simplex exceeded {0} pivots")]
    PivotLimit(usize),

    #[error("test function is not 1-Lipschitz between atoms {i} and {j}: |f_i - f_j| = {diff} > d = {dist}")]
    Lipschitz { i: usize, j: usize, diff: f64, dist: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("flow step rejected: {0}")]
    StepRejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
