use crate::numerics::Vector;

/// Errors surfaced by the analysis kernels.
///
/// `InternalInconsistency` means two algebraically identical routes disagreed
/// beyond tolerance; it always indicates a bug, never bad input.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("quadrature did not converge: estimated error {estimated_error:e} above tolerance")]
    QuadratureNotConverged {
        best: Vector,
        estimated_error: f64,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
