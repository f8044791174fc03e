//! Shared builders for the unit-test suites.

use crate::numerics::{sample_gaussian_matrix, ActivationKind, RngStream};
use crate::transformer::{AttentionWeights, BlockWeights, MlpWeights};

pub(crate) fn random_attention(
    d: usize,
    std: f64,
    stream: RngStream,
) -> (AttentionWeights, RngStream) {
    let (w_q, s) = sample_gaussian_matrix(stream, d, d, std).unwrap();
    let (w_k, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w_v, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w_o, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    (AttentionWeights::new(w_q, w_k, w_v, w_o).unwrap(), s)
}

pub(crate) fn random_block(
    d: usize,
    kind: ActivationKind,
    std: f64,
    stream: RngStream,
) -> (BlockWeights, RngStream) {
    let (attn, s) = random_attention(d, std, stream);
    let (w1, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w2, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let mlp = MlpWeights::new(w1, w2, kind).unwrap();
    (BlockWeights::new(attn, mlp).unwrap(), s)
}

pub(crate) fn random_stack(
    depth: usize,
    d: usize,
    kind: ActivationKind,
    std: f64,
    stream: RngStream,
) -> (Vec<BlockWeights>, RngStream) {
    let mut stack = Vec::with_capacity(depth);
    let mut s = stream;
    for _ in 0..depth {
        let (b, next) = random_block(d, kind, std, s);
        s = next;
        stack.push(b);
    }
    (stack, s)
}
