//! Single-layer contextual correction: the attention delta and its closed
//! form, the correction vector g as a Jacobian line integral with a
//! direct-difference cross-check, the exact error decomposition, the norm
//! bound and direction condition, failure classification, and the
//! multi-position extension.

use crate::error::{CoreError, Result};
use crate::numerics::{
    activation_jacobian_diag, integrate_unit_interval, operator_norm, ActivationKind, Matrix,
    QuadratureConfig, Vector, OPERATOR_NORM_TOL,
};
use crate::transformer::{
    attention_row, block_forward_at, mlp_forward, mlp_lipschitz, AttentionWeights, BlockWeights,
    MlpWeights, Visibility,
};

/// Tolerance for the agreement between the literal attention difference and
/// the closed form alpha * W_O * (v_new - v_old).
pub const CLOSED_FORM_TOL: f64 = 1e-12;

/// Tolerance for the decomposition identity e_ctx - e_base = g.
pub const DECOMPOSITION_TOL: f64 = 1e-12;

/// Slack factor on the norm bound check.
pub const NORM_BOUND_SLACK: f64 = 1e-10;

/// Breakpoints of the relu integrand closer than this to each other or to the
/// segment ends are merged/dropped; the events have measure zero.
const BREAKPOINT_MERGE_TOL: f64 = 1e-14;

/// Change of the attention output at the readout position caused by one new
/// context token, together with the quantities of its closed form.
///
/// `delta` is the literal difference of the two attention outputs; the
/// constructor verifies it against `alpha_new * W_O * value_gap` per
/// coordinate.
#[derive(Debug, Clone)]
pub struct AttnDelta {
    delta: Vector,
    alpha_new: f64,
    value_gap: Vector,
    baseline_point: Vector,
}

impl AttnDelta {
    pub fn checked(
        delta: Vector,
        alpha_new: f64,
        value_gap: Vector,
        baseline_point: Vector,
        w_o: &Matrix,
    ) -> Result<Self> {
        let closed = w_o.matvec(&value_gap).scale(alpha_new);
        let gap = (&delta - &closed).norm_inf();
        if gap > CLOSED_FORM_TOL {
            return Err(CoreError::InternalInconsistency(format!(
                "attention delta disagrees with its closed form by {gap:e}"
            )));
        }
        Ok(AttnDelta {
            delta,
            alpha_new,
            value_gap,
            baseline_point,
        })
    }

    /// For deltas where the closed form is intentionally not an identity
    /// (cross-run layer deltas, position-specific multi-token deltas).
    pub(crate) fn unchecked(
        delta: Vector,
        alpha_new: f64,
        value_gap: Vector,
        baseline_point: Vector,
    ) -> Self {
        AttnDelta {
            delta,
            alpha_new,
            value_gap,
            baseline_point,
        }
    }

    pub fn delta(&self) -> &Vector {
        &self.delta
    }

    pub fn alpha_new(&self) -> f64 {
        self.alpha_new
    }

    pub fn value_gap(&self) -> &Vector {
        &self.value_gap
    }

    pub fn baseline_point(&self) -> &Vector {
        &self.baseline_point
    }
}

fn weighted_value_mix(row: &Vector, values: &[Vector], d: usize) -> Vector {
    let mut mix = Vector::zeros(d);
    for (j, v) in values.iter().enumerate() {
        if row[j] != 0.0 {
            mix = mix.add_scaled(row[j], v);
        }
    }
    mix
}

/// Attention delta for a single context token against a lone query:
/// Attn_x([t,x]) - Attn_x([x]), verified against alpha * W_O * (v_t - v_x).
pub fn attn_delta_single(t: &Vector, x: &Vector, w: &AttentionWeights) -> Result<AttnDelta> {
    attn_delta_incremental(&[], t, x, w)
}

/// Attention delta for a new context token t_new inserted after an existing
/// context set T. The pre-insertion attention row defines the effective value
/// v_bar (the attention-weighted mix over T and x); the delta closed form is
/// alpha_new * W_O * (v_new - v_bar).
pub fn attn_delta_incremental(
    existing: &[Vector],
    t_new: &Vector,
    x: &Vector,
    w: &AttentionWeights,
) -> Result<AttnDelta> {
    let d = w.dim();
    if t_new.len() != d || x.len() != d || existing.iter().any(|t| t.len() != d) {
        return Err(CoreError::InvalidInput(
            "token dimensions must match the attention weights".into(),
        ));
    }
    let n = existing.len();

    // old run: [T, x]
    let mut old_states: Vec<Vector> = existing.to_vec();
    old_states.push(x.clone());
    let old_values: Vec<Vector> = old_states.iter().map(|s| w.w_v.matvec(s)).collect();
    let old_row = attention_row(&old_states, n, &vec![true; n + 1], w)?;
    let v_bar = weighted_value_mix(&old_row, &old_values, d);
    let baseline = x + &w.w_o.matvec(&v_bar);

    // new run: [T, t_new, x]
    let mut new_states: Vec<Vector> = existing.to_vec();
    new_states.push(t_new.clone());
    new_states.push(x.clone());
    let new_values: Vec<Vector> = new_states.iter().map(|s| w.w_v.matvec(s)).collect();
    let new_row = attention_row(&new_states, n + 1, &vec![true; n + 2], w)?;
    let new_mix = weighted_value_mix(&new_row, &new_values, d);
    let attn_new = x + &w.w_o.matvec(&new_mix);

    let delta = &attn_new - &baseline;
    let alpha_new = new_row[n];
    let value_gap = &new_values[n] - &v_bar;
    AttnDelta::checked(delta, alpha_new, value_gap, baseline, &w.w_o)
}

/// Exact correction vector by the fundamental theorem of calculus:
/// MLP(z0 + delta) - MLP(z0). This is the contract-bearing value; the
/// integral form below validates the line-integral representation against it.
pub fn correction_direct(delta: &AttnDelta, mlp: &MlpWeights) -> Vector {
    let endpoint = &delta.baseline_point + &delta.delta;
    &mlp_forward(&endpoint, mlp) - &mlp_forward(&delta.baseline_point, mlp)
}

/// Correction vector as the line integral of the MLP Jacobian along the
/// attention-delta segment.
///
/// relu: exact evaluation. Each hidden preactivation is affine in the path
/// parameter, so its sign changes at most once; between consecutive
/// breakpoints the integrand is constant. Returned error estimate is 0.
///
/// Smooth activations: adaptive composite Gauss-Legendre to `q.tol` per
/// coordinate; the estimate is the last successive refinement difference.
pub fn correction_integral(
    delta: &AttnDelta,
    mlp: &MlpWeights,
    q: &QuadratureConfig,
) -> Result<(Vector, f64)> {
    if delta.baseline_point.len() != mlp.dim() {
        return Err(CoreError::InvalidInput(
            "delta dimension does not match the MLP".into(),
        ));
    }
    let wz = mlp.w1.matvec(&delta.baseline_point);
    let wd = mlp.w1.matvec(&delta.delta);
    match mlp.kind {
        ActivationKind::Relu => Ok((relu_segment_integral(&delta.delta, &wz, &wd, mlp), 0.0)),
        ActivationKind::Tanh | ActivationKind::Gelu => {
            let integrand = |s: f64| {
                let pre = wz.add_scaled(s, &wd);
                let gain = activation_jacobian_diag(mlp.kind, &pre).hadamard(&wd);
                &delta.delta + &mlp.w2.matvec(&gain)
            };
            integrate_unit_interval(integrand, q)
        }
    }
}

/// Roots of the affine preactivations inside (0,1), merged and sorted.
fn relu_breakpoints(wz: &Vector, wd: &Vector) -> Vec<f64> {
    let mut roots: Vec<f64> = (0..wz.len())
        .filter_map(|i| {
            if wd[i] == 0.0 {
                return None;
            }
            let r = -wz[i] / wd[i];
            (r > BREAKPOINT_MERGE_TOL && r < 1.0 - BREAKPOINT_MERGE_TOL).then_some(r)
        })
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= BREAKPOINT_MERGE_TOL);
    roots
}

fn relu_segment_integral(delta: &Vector, wz: &Vector, wd: &Vector, mlp: &MlpWeights) -> Vector {
    let roots = relu_breakpoints(wz, wd);
    let mut g = Vector::zeros(delta.len());
    let mut left = 0.0;
    for k in 0..=roots.len() {
        let right = if k < roots.len() { roots[k] } else { 1.0 };
        let mid = 0.5 * (left + right);
        // active-set indicator on this panel, applied to W_1 delta
        let gated: Vector = (0..wd.len())
            .map(|i| if wz[i] + mid * wd[i] > 0.0 { wd[i] } else { 0.0 })
            .collect();
        let integrand = delta + &mlp.w2.matvec(&gated);
        g = g.add_scaled(right - left, &integrand);
        left = right;
    }
    g
}

/// e_base = Block_x([x]) - y and e_ctx = Block_x([context, x]) - y.
pub fn error_pair(
    block: &BlockWeights,
    context: &[Vector],
    x: &Vector,
    y: &Vector,
) -> Result<(Vector, Vector)> {
    if y.len() != block.dim() {
        return Err(CoreError::InvalidInput(
            "target dimension does not match the block".into(),
        ));
    }
    let base_out = block_forward_at(&[x.clone()], 0, &[true], block)?;
    let mut states: Vec<Vector> = context.to_vec();
    states.push(x.clone());
    let pos = states.len() - 1;
    let ctx_out = block_forward_at(&states, pos, &vec![true; states.len()], block)?;
    Ok((&base_out - y, &ctx_out - y))
}

/// Cosine of the angle between g and the negative baseline error.
/// Rounding overshoot beyond 1e-12 is treated as a numerical fault rather
/// than silently clamped.
pub fn context_error_angle(e_base: &Vector, g: &Vector) -> Result<f64> {
    let ne = e_base.norm();
    let ng = g.norm();
    if ne == 0.0 || ng == 0.0 {
        return Err(CoreError::DegenerateGeometry(
            "context-error angle needs nonzero error and correction".into(),
        ));
    }
    let rho = -e_base.dot(g) / (ne * ng);
    if rho.abs() > 1.0 + 1e-12 {
        return Err(CoreError::NumericalFailure(format!(
            "cosine overshoot: {rho}"
        )));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// L_MLP * alpha * ||W_O|| * ||v_new - v_old||, the norm bound on g.
pub fn norm_bound_single(
    delta: &AttnDelta,
    mlp: &MlpWeights,
    w: &AttentionWeights,
) -> Result<f64> {
    let lip = mlp_lipschitz(mlp)?;
    let wo_norm = operator_norm(&w.w_o, OPERATOR_NORM_TOL)?;
    Ok(lip * delta.alpha_new * wo_norm * delta.value_gap.norm())
}

/// Outcome of the error-decrease necessary condition.
#[derive(Debug, Clone, Copy)]
pub struct Condition {
    pub decreased: bool,
    pub condition_satisfied: bool,
    pub rho: f64,
    pub ratio: f64,
}

/// Evaluates the direction condition: error decreased iff
/// rho > ||g|| / (2 ||e_base||) when g is the exact output change.
/// A zero correction vector reports rho = 0 by convention.
pub fn necessary_condition(e_base: &Vector, e_ctx: &Vector, g: &Vector) -> Result<Condition> {
    let ne = e_base.norm();
    if ne == 0.0 {
        return Err(CoreError::DegenerateGeometry(
            "necessary condition needs a nonzero baseline error".into(),
        ));
    }
    let decreased = e_ctx.norm() < ne;
    let ng = g.norm();
    let rho = if ng == 0.0 {
        0.0
    } else {
        context_error_angle(e_base, g)?
    };
    let ratio = ng / (2.0 * ne);
    Ok(Condition {
        decreased,
        condition_satisfied: rho > ratio,
        rho,
        ratio,
    })
}

/// Error taxonomy for instances where the context failed to reduce the error:
/// direction misaligned (angle) or correction too large (norm). When both
/// apply, angle wins; it is the stronger diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    None,
    Angle,
    Norm,
}

impl FailureClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureClass::None => "none",
            FailureClass::Angle => "angle",
            FailureClass::Norm => "norm",
        }
    }

    pub fn parse(s: &str) -> Option<FailureClass> {
        match s {
            "none" => Some(FailureClass::None),
            "angle" => Some(FailureClass::Angle),
            "norm" => Some(FailureClass::Norm),
            _ => None,
        }
    }
}

pub fn classify_failure(decreased: bool, rho: f64, _ratio: f64) -> FailureClass {
    // a non-decreased instance has ratio >= rho up to rounding, so rho >= 0
    // always lands in the over-attention (norm) class
    if decreased {
        FailureClass::None
    } else if rho < 0.0 {
        FailureClass::Angle
    } else {
        FailureClass::Norm
    }
}

/// Full single-instance analysis: g both ways, decomposition check, bound,
/// condition, classification.
#[derive(Debug, Clone)]
pub struct CorrectionReport {
    pub g_integral: Vector,
    pub g_direct: Vector,
    /// ||g_integral - g_direct|| (infinity norm).
    pub quadrature_error: f64,
    pub e_base: Vector,
    pub e_ctx: Vector,
    pub rho: f64,
    pub norm_bound: f64,
    pub ratio: f64,
    pub decreased: bool,
    pub condition_satisfied: bool,
    pub failure_class: FailureClass,
}

fn build_report(
    delta: &AttnDelta,
    block: &BlockWeights,
    e_base: Vector,
    e_ctx: Vector,
    q: &QuadratureConfig,
) -> Result<CorrectionReport> {
    let g_direct = correction_direct(delta, &block.mlp);
    let (g_integral, _est) = correction_integral(delta, &block.mlp, q)?;
    let quadrature_error = (&g_integral - &g_direct).norm_inf();

    let identity_gap = (&(&e_ctx - &e_base) - &g_direct).norm_inf();
    if identity_gap > DECOMPOSITION_TOL {
        return Err(CoreError::InternalInconsistency(format!(
            "error decomposition violated by {identity_gap:e}"
        )));
    }

    let norm_bound = norm_bound_single(delta, &block.mlp, &block.attn)?;
    if g_direct.norm() > norm_bound * (1.0 + NORM_BOUND_SLACK) {
        return Err(CoreError::InternalInconsistency(format!(
            "correction norm {:e} exceeds its bound {:e}",
            g_direct.norm(),
            norm_bound
        )));
    }

    let cond = necessary_condition(&e_base, &e_ctx, &g_direct)?;
    Ok(CorrectionReport {
        g_integral,
        g_direct,
        quadrature_error,
        e_base,
        e_ctx,
        rho: cond.rho,
        norm_bound,
        ratio: cond.ratio,
        decreased: cond.decreased,
        condition_satisfied: cond.condition_satisfied,
        failure_class: classify_failure(cond.decreased, cond.rho, cond.ratio),
    })
}

/// Report for a single context token t against query x with target y.
pub fn single_report(
    block: &BlockWeights,
    t: &Vector,
    x: &Vector,
    y: &Vector,
    q: &QuadratureConfig,
) -> Result<(AttnDelta, CorrectionReport)> {
    let delta = attn_delta_single(t, x, &block.attn)?;
    let (e_base, e_ctx) = error_pair(block, std::slice::from_ref(t), x, y)?;
    let report = build_report(&delta, block, e_base, e_ctx, q)?;
    Ok((delta, report))
}

/// Report for a new token t_new added to an existing context set. The two
/// errors are e(T, x) and e(T + {t_new}, x); their difference is the
/// incremental correction.
pub fn incremental_report(
    block: &BlockWeights,
    existing: &[Vector],
    t_new: &Vector,
    x: &Vector,
    y: &Vector,
    q: &QuadratureConfig,
) -> Result<(AttnDelta, CorrectionReport)> {
    let delta = attn_delta_incremental(existing, t_new, x, &block.attn)?;
    let (_, e_old) = error_pair(block, existing, x, y)?;
    let mut full: Vec<Vector> = existing.to_vec();
    full.push(t_new.clone());
    let (_, e_new) = error_pair(block, &full, x, y)?;
    let report = build_report(&delta, block, e_old, e_new, q)?;
    Ok((delta, report))
}

/// Per-position decomposition for multi-token queries.
#[derive(Debug, Clone)]
pub struct PositionReport {
    pub position: usize,
    pub e_base: Vector,
    pub e_ctx: Vector,
    pub g: Vector,
    pub rho: f64,
    pub ratio: f64,
}

/// Decompose the error at every query position: g_p is the literal difference
/// of the block outputs with and without the context prefix (the two runs
/// interact through attention, so no closed form is asserted).
pub fn multiposition_decompose(
    block: &BlockWeights,
    context: &[Vector],
    queries: &[Vector],
    targets: &[Vector],
    visibility: Visibility,
) -> Result<Vec<PositionReport>> {
    if targets.len() != queries.len() {
        return Err(CoreError::InvalidInput(
            "one target per query position required".into(),
        ));
    }
    let n = context.len();
    let mut ctx_states: Vec<Vector> = context.to_vec();
    ctx_states.extend_from_slice(queries);
    let mut reports = Vec::with_capacity(queries.len());
    for p in 0..queries.len() {
        let base_mask: Vec<bool> = match visibility {
            Visibility::Causal => (0..queries.len()).map(|j| j <= p).collect(),
            Visibility::Full => vec![true; queries.len()],
        };
        let ctx_mask: Vec<bool> = match visibility {
            Visibility::Causal => (0..ctx_states.len()).map(|j| j <= n + p).collect(),
            Visibility::Full => vec![true; ctx_states.len()],
        };
        let base_out = block_forward_at(queries, p, &base_mask, block)?;
        let ctx_out = block_forward_at(&ctx_states, n + p, &ctx_mask, block)?;
        let g = &ctx_out - &base_out;
        let e_base = &base_out - &targets[p];
        let e_ctx = &ctx_out - &targets[p];

        let identity_gap = (&(&e_ctx - &e_base) - &g).norm_inf();
        if identity_gap > DECOMPOSITION_TOL {
            return Err(CoreError::InternalInconsistency(format!(
                "position {p} decomposition violated by {identity_gap:e}"
            )));
        }
        let ne = e_base.norm();
        let ng = g.norm();
        let rho = if ne == 0.0 || ng == 0.0 {
            0.0
        } else {
            context_error_angle(&e_base, &g)?
        };
        let ratio = if ne == 0.0 { 0.0 } else { ng / (2.0 * ne) };
        reports.push(PositionReport {
            position: p,
            e_base,
            e_ctx,
            g,
            rho,
            ratio,
        });
    }
    Ok(reports)
}
