//! Multi-layer attribution: per-layer attention deltas and corrections,
//! propagation through the upper single-token blocks via Jacobian-vector
//! products along the integration path, the total correction, the
//! Lipschitz-product norm bound, and the residual diagnostic.
//!
//! The total decomposition is not exact for two or more layers: the upper map
//! is built from single-token blocks on the no-context trajectory while the
//! real context run lets upper-layer attention read the context position. The
//! gap is reported as a first-class residual, never absorbed.

use crate::correction::{context_error_angle, correction_integral, AttnDelta};
use crate::error::{CoreError, Result};
use crate::numerics::{
    activation_apply, activation_jacobian_diag, integrate_unit_interval, operator_norm,
    ActivationKind, Matrix, QuadratureConfig, Vector, OPERATOR_NORM_TOL,
};
use crate::transformer::{
    mlp_forward, mlp_lipschitz, stack_forward, BlockWeights, ForwardTrace, MlpWeights,
    TokenSequence, Visibility,
};

/// Hidden-state convention for layer deltas above the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaConvention {
    /// Both attention terms evaluated at the context run's pre-layer state of
    /// the readout position, with the context token masked vs unmasked. The
    /// closed form alpha * W_O * (v_t - v_x) is an exact identity here.
    CommonState,
    /// Literal difference between the two runs' attention outputs; includes
    /// hidden-state drift, so no closed form is asserted.
    CrossRun,
}

/// Per-layer attention delta. Requires single-context traces ([t, x] vs [x]).
pub fn layer_delta(
    l: usize,
    ctx_trace: &ForwardTrace,
    base_trace: &ForwardTrace,
    stack: &[BlockWeights],
    convention: DeltaConvention,
) -> Result<AttnDelta> {
    if l == 0 || l > stack.len() || stack.len() != ctx_trace.depth() {
        return Err(CoreError::InvalidInput(format!(
            "layer index {l} out of range for depth {}",
            stack.len()
        )));
    }
    if ctx_trace.embeddings.len() != 2 || ctx_trace.readout_pos != 1 {
        return Err(CoreError::InvalidInput(
            "layer deltas require a [t, x] context trace".into(),
        ));
    }
    let w = &stack[l - 1].attn;
    let layer = &ctx_trace.layers[l - 1];
    let readout = ctx_trace.readout_pos;
    let alpha = layer.attn_row[0];
    let value_gap = &layer.values[0] - &layer.values[readout];
    // the no-context run's attention output at this layer anchors the
    // correction integral
    let baseline = base_trace.layers[l - 1].post_attn.clone();
    match convention {
        DeltaConvention::CommonState => {
            let states = ctx_trace.states_before(l);
            let masked = &states[readout] + &w.w_o.matvec(&layer.values[readout]);
            let delta = &layer.post_attn - &masked;
            AttnDelta::checked(delta, alpha, value_gap, baseline, &w.w_o)
        }
        DeltaConvention::CrossRun => {
            let delta = &layer.post_attn - &base_trace.layers[l - 1].post_attn;
            Ok(AttnDelta::unchecked(delta, alpha, value_gap, baseline))
        }
    }
}

/// Layer-local correction vector: the line integral of the layer's MLP
/// Jacobian along the delta segment, anchored at the no-context attention
/// output. Same machinery as the single-layer integral.
pub fn layer_correction(
    delta: &AttnDelta,
    mlp: &MlpWeights,
    q: &QuadratureConfig,
) -> Result<(Vector, f64)> {
    correction_integral(delta, mlp, q)
}

/// The block map restricted to a single-token sequence, where self-attention
/// has weight 1: B(z) = MLP((I + W_O W_V) z).
pub fn single_token_block_map(z: &Vector, block: &BlockWeights) -> Vector {
    let attn = z + &block.attn.w_o.matvec(&block.attn.w_v.matvec(z));
    mlp_forward(&attn, &block.mlp)
}

/// Composition of the single-token blocks above layer `l` (identity for
/// l = depth).
pub fn upper_map(l: usize, z: &Vector, stack: &[BlockWeights]) -> Vector {
    let mut p = z.clone();
    for block in &stack[l..] {
        p = single_token_block_map(&p, block);
    }
    p
}

/// Jacobian-vector product of the upper map at `z` applied to `v`, by
/// forward-mode propagation of (point, tangent) pairs through each block.
pub fn upper_map_jvp(l: usize, z: &Vector, v: &Vector, stack: &[BlockWeights]) -> Vector {
    let mut p = z.clone();
    let mut u = v.clone();
    for block in &stack[l..] {
        let q = &p + &block.attn.w_o.matvec(&block.attn.w_v.matvec(&p));
        let uq = &u + &block.attn.w_o.matvec(&block.attn.w_v.matvec(&u));
        let pre = block.mlp.w1.matvec(&q);
        let diag = activation_jacobian_diag(block.mlp.kind, &pre);
        p = &q + &block.mlp.w2.matvec(&activation_apply(block.mlp.kind, &pre));
        u = &uq + &block.mlp.w2.matvec(&diag.hadamard(&block.mlp.w1.matvec(&uq)));
    }
    u
}

/// One affine piece of the path through a piecewise-linear composition:
/// value(s) = point + (s - s0) * dir on [s0, s1].
struct AffinePiece {
    s0: f64,
    s1: f64,
    point: Vector,
    dir: Vector,
}

const PIECE_MERGE_TOL: f64 = 1e-14;

/// Exact path integral of the upper-map Jacobian for all-relu upper blocks.
///
/// The composition of relu blocks is piecewise linear, so along the segment
/// z + s g the tangent is piecewise constant. Each layer's preactivations are
/// affine in s on every current piece; their roots subdivide the pieces, and
/// within a sub-piece the active set is fixed, keeping the map affine. The
/// integral is the width-weighted sum of the final tangents.
fn relu_upper_exact(l: usize, z: &Vector, g: &Vector, stack: &[BlockWeights]) -> Vector {
    let mut pieces = vec![AffinePiece {
        s0: 0.0,
        s1: 1.0,
        point: z.clone(),
        dir: g.clone(),
    }];
    for block in &stack[l..] {
        let mut next = Vec::with_capacity(pieces.len());
        for piece in &pieces {
            let ap = &piece.point
                + &block.attn.w_o.matvec(&block.attn.w_v.matvec(&piece.point));
            let ad = &piece.dir + &block.attn.w_o.matvec(&block.attn.w_v.matvec(&piece.dir));
            let base = block.mlp.w1.matvec(&ap); // preactivations at s0
            let slope = block.mlp.w1.matvec(&ad);
            let mut roots: Vec<f64> = (0..base.len())
                .filter_map(|i| {
                    if slope[i] == 0.0 {
                        return None;
                    }
                    let r = piece.s0 - base[i] / slope[i];
                    (r > piece.s0 + PIECE_MERGE_TOL && r < piece.s1 - PIECE_MERGE_TOL)
                        .then_some(r)
                })
                .collect();
            roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            roots.dedup_by(|a, b| (*a - *b).abs() <= PIECE_MERGE_TOL);

            let mut left = piece.s0;
            for k in 0..=roots.len() {
                let right = if k < roots.len() { roots[k] } else { piece.s1 };
                let mid = 0.5 * (left + right);
                let gate: Vec<bool> = (0..base.len())
                    .map(|i| base[i] + (mid - piece.s0) * slope[i] > 0.0)
                    .collect();
                let gated_base: Vector = (0..base.len())
                    .map(|i| if gate[i] { base[i] } else { 0.0 })
                    .collect();
                let gated_slope: Vector = (0..slope.len())
                    .map(|i| if gate[i] { slope[i] } else { 0.0 })
                    .collect();
                // out(s) anchored at s0, then re-anchored at this sub-piece
                let np0 = &ap + &block.mlp.w2.matvec(&gated_base);
                let nd = &ad + &block.mlp.w2.matvec(&gated_slope);
                next.push(AffinePiece {
                    s0: left,
                    s1: right,
                    point: np0.add_scaled(left - piece.s0, &nd),
                    dir: nd,
                });
                left = right;
            }
        }
        pieces = next;
    }
    let mut total = Vector::zeros(z.len());
    for piece in &pieces {
        total = total.add_scaled(piece.s1 - piece.s0, &piece.dir);
    }
    total
}

/// Push a layer-local correction through the upper layers:
/// integral over s of J_Phi(h + s g) g, where h is the no-context hidden
/// state after layer `l`. For all-relu upper blocks the integral is evaluated
/// exactly; smooth activations use the adaptive quadrature.
pub fn propagate_correction(
    l: usize,
    base_trace: &ForwardTrace,
    g_l: &Vector,
    stack: &[BlockWeights],
    q: &QuadratureConfig,
) -> Result<(Vector, f64)> {
    if l == 0 || l > stack.len() {
        return Err(CoreError::InvalidInput(format!(
            "layer index {l} out of range for depth {}",
            stack.len()
        )));
    }
    if l == stack.len() {
        return Ok((g_l.clone(), 0.0));
    }
    if g_l.norm_inf() == 0.0 {
        return Ok((Vector::zeros(g_l.len()), 0.0));
    }
    let anchor = base_trace.readout_after(l).clone();
    let all_relu = stack[l..].iter().all(|b| b.mlp.kind == ActivationKind::Relu);
    if all_relu {
        Ok((relu_upper_exact(l, &anchor, g_l, stack), 0.0))
    } else {
        integrate_unit_interval(
            |s| upper_map_jvp(l, &anchor.add_scaled(s, g_l), g_l, stack),
            q,
        )
    }
}

/// L_blk = L_MLP * ||I + W_O W_V||, a Lipschitz constant of the single-token
/// block map.
pub fn block_lipschitz(block: &BlockWeights) -> Result<f64> {
    let d = block.dim();
    let affine = Matrix::identity(d).add(&block.attn.w_o.matmul(&block.attn.w_v));
    Ok(mlp_lipschitz(&block.mlp)? * operator_norm(&affine, OPERATOR_NORM_TOL)?)
}

/// Everything attributed to one layer.
#[derive(Debug, Clone)]
pub struct LayerTerm {
    /// 1-based layer index.
    pub layer: usize,
    pub delta: Vector,
    /// Layer-local correction g^(l).
    pub g_local: Vector,
    /// g^(l) propagated to the output space.
    pub g_propagated: Vector,
    pub block_lip: f64,
    pub mlp_lip: f64,
    pub alpha: f64,
    pub value_gap_norm: f64,
    pub w_o_norm: f64,
    /// (prod_{j>l} L_blk^(j)) * L_MLP^(l) * alpha^(l) * ||W_O^(l)|| * ||dv^(l)||
    pub bound: f64,
    /// Combined quadrature error estimate (local integral + propagation).
    pub quadrature_error: f64,
}

/// Full multi-layer attribution for one ([t, x], y) instance.
#[derive(Debug, Clone)]
pub struct LayerAttribution {
    pub layers: Vec<LayerTerm>,
    /// Sum of the propagated per-layer corrections.
    pub g_total: Vector,
    /// Corollary-style sum of per-layer bound terms.
    pub bound_total: f64,
    /// e_ctx - e_base - g_total; diagnostic, not asserted to vanish for
    /// depth >= 2.
    pub residual: Vector,
    pub rho_total: f64,
    pub ratio_total: f64,
    pub e_base: Vector,
    pub e_ctx: Vector,
}

impl LayerAttribution {
    pub fn decreased(&self) -> bool {
        self.e_ctx.norm() < self.e_base.norm()
    }

    /// ||residual|| relative to ||g_total|| (0 when both vanish).
    pub fn residual_rel(&self) -> f64 {
        let gn = self.g_total.norm();
        if gn == 0.0 {
            if self.residual.norm() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.residual.norm() / gn
        }
    }

    /// Checks the per-layer and total norm bounds (valid under the
    /// common-state convention).
    pub fn validate_bounds(&self, slack: f64) -> Result<()> {
        let mut tilde_sum = 0.0;
        for term in &self.layers {
            let gn = term.g_propagated.norm();
            tilde_sum += gn;
            if gn > term.bound * (1.0 + slack) + f64::MIN_POSITIVE {
                return Err(CoreError::InternalInconsistency(format!(
                    "layer {}: propagated correction {gn:e} exceeds bound {:e}",
                    term.layer, term.bound
                )));
            }
        }
        if self.g_total.norm() > self.bound_total * (1.0 + slack) + f64::MIN_POSITIVE {
            return Err(CoreError::InternalInconsistency(format!(
                "total correction {:e} exceeds bound {:e}",
                self.g_total.norm(),
                self.bound_total
            )));
        }
        if self.bound_total < tilde_sum * (1.0 - slack) - f64::MIN_POSITIVE {
            return Err(CoreError::InternalInconsistency(format!(
                "bound total {:e} below the propagated-norm sum {tilde_sum:e}",
                self.bound_total
            )));
        }
        Ok(())
    }
}

/// Run both traces and attribute the output error change across layers.
pub fn attribute_stack(
    stack: &[BlockWeights],
    t: &Vector,
    x: &Vector,
    y: &Vector,
    q: &QuadratureConfig,
    convention: DeltaConvention,
) -> Result<LayerAttribution> {
    if stack.is_empty() {
        return Err(CoreError::InvalidInput("attribution needs at least one layer".into()));
    }
    let seq_ctx = TokenSequence::with_context(vec![t.clone()], x.clone())?;
    let seq_base = TokenSequence::single(x.clone());
    let ctx_trace = stack_forward(&seq_ctx, stack, Visibility::Causal)?;
    let base_trace = stack_forward(&seq_base, stack, Visibility::Causal)?;
    let e_base = &base_trace.output().clone() - y;
    let e_ctx = &ctx_trace.output().clone() - y;

    let depth = stack.len();
    let block_lips: Vec<f64> = stack.iter().map(block_lipschitz).collect::<Result<_>>()?;
    let mlp_lips: Vec<f64> = stack.iter().map(|b| mlp_lipschitz(&b.mlp)).collect::<Result<_>>()?;

    let mut layers = Vec::with_capacity(depth);
    let mut g_total = Vector::zeros(x.len());
    let mut bound_total = 0.0;
    for l in 1..=depth {
        let delta = layer_delta(l, &ctx_trace, &base_trace, stack, convention)?;
        let (g_local, local_err) = layer_correction(&delta, &stack[l - 1].mlp, q)?;
        let (g_propagated, prop_err) = propagate_correction(l, &base_trace, &g_local, stack, q)?;
        let upper_prod: f64 = block_lips[l..].iter().product();
        let w_o_norm = operator_norm(&stack[l - 1].attn.w_o, OPERATOR_NORM_TOL)?;
        let alpha = delta.alpha_new();
        let value_gap_norm = delta.value_gap().norm();
        let bound = upper_prod * mlp_lips[l - 1] * alpha * w_o_norm * value_gap_norm;
        g_total = &g_total + &g_propagated;
        bound_total += bound;
        layers.push(LayerTerm {
            layer: l,
            delta: delta.delta().clone(),
            g_local,
            g_propagated,
            block_lip: block_lips[l - 1],
            mlp_lip: mlp_lips[l - 1],
            alpha,
            value_gap_norm,
            w_o_norm,
            bound,
            quadrature_error: local_err + prop_err,
        });
    }

    let residual = &(&e_ctx - &e_base) - &g_total;
    let ne = e_base.norm();
    let ng = g_total.norm();
    let rho_total = if ne == 0.0 || ng == 0.0 {
        0.0
    } else {
        context_error_angle(&e_base, &g_total)?
    };
    let ratio_total = if ne == 0.0 { 0.0 } else { ng / (2.0 * ne) };

    Ok(LayerAttribution {
        layers,
        g_total,
        bound_total,
        residual,
        rho_total,
        ratio_total,
        e_base,
        e_ctx,
    })
}
