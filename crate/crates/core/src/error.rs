use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not Hermitian: asymmetry {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("matrix is not positive semidefinite: min eigenvalue {0:.3e}")]
    NotPsd(f64),
    #[error("sign degenerate: eigenvalue {0:.3e} within 1e-10 of zero")]
    SignDegenerate(f64),
    #[error("eigensolver failed: {0}")]
    Eig(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("lost positivity of Im m and damping floor reached (min eig {0:.3e})")]
    PositivityLost(f64),
    #[error("spectral parameter must have Im z > 0, got {0}")]
    RealSpectralParameter(f64),
    #[error("isolated eigenvalue gate failed: separation {sep:.3e} below {gate:.3e}")]
    NotIsolated { sep: f64, gate: f64 },
    #[error("indeterminate spectral index: eigenvalue {0:.3e} within the zero band")]
    IndeterminateIndex(f64),
    #[error("point {0} is inside the support; formula requires an exterior point")]
    InsideSupport(f64),
    #[error("window {0:?} does not cover the support bound {1:?}")]
    WindowTooSmall((f64, f64), (f64, f64)),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("iteration failed to isolate eigenpair: {0}")]
    IterationStalled(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
