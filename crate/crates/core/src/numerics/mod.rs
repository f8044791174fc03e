//! Shared numeric kernels: dense vectors/matrices, row softmax, operator
//! norms, Gauss-Legendre rules, activation functions with derivatives, and
//! deterministic counter-based random streams.

mod activation;
mod linalg;
mod quadrature;
mod rng;

pub use activation::{
    activation_apply, activation_jacobian_diag, activation_lipschitz, ActivationKind,
    GELU_LIPSCHITZ,
};
pub use linalg::{operator_norm, softmax_row, Matrix, Vector};
pub use quadrature::{gauss_legendre_unit, integrate_unit_interval, QuadratureConfig};
pub use rng::{
    derive_stream, sample_gaussian_matrix, sample_gaussian_vector, sample_unit_vector, RngStream,
};

/// Relative tolerance used for operator norms throughout the crate. The
/// Lipschitz bounds must not be understated by a loose norm.
pub const OPERATOR_NORM_TOL: f64 = 1e-10;
