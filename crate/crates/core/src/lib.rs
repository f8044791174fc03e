//! Exact error dynamics of contextual information in residual
//! attention/MLP blocks.
//!
//! A context token changes the attention output at the readout position by a
//! delta with a closed form; pushing that delta through the MLP along a line
//! integral of its Jacobian gives a correction vector that accounts exactly
//! for the change in the output error. This crate implements the block model,
//! the correction vector (integral and direct forms), its norm bound and
//! direction condition, the multi-context and multi-layer extensions, and a
//! theory-guided context selector.
//!
//! Modules:
//! - [`numerics`]: vectors/matrices, softmax, operator norms, quadrature,
//!   activations, deterministic random streams.
//! - [`transformer`]: attention, MLP, blocks, stacks, forward traces, weight
//!   JSON import/export.
//! - [`correction`]: single-layer deltas, corrections, decomposition, bounds,
//!   failure classes, multi-position decomposition.
//! - [`multilayer`]: per-layer attribution with propagation through the upper
//!   blocks and the Lipschitz-product bound.
//! - [`selector`]: candidate scoring and selection policies.

pub mod correction;
pub mod error;
pub mod multilayer;
pub mod numerics;
pub mod oracles;
pub mod selector;
pub mod transformer;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{CoreError, Result};
