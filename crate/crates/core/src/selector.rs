//! Theory-guided context selection: coarse filtering by attention logits,
//! per-candidate relevance/complementarity scores, the selection rule (filter
//! on the context-error angle, then maximize alpha * ||v_t - v_x||), and
//! policy comparison against baselines.

use crate::correction::{attn_delta_single, context_error_angle, correction_direct, error_pair};
use crate::error::{CoreError, Result};
use crate::numerics::{derive_stream, RngStream, Vector};
use crate::transformer::{AttentionWeights, BlockWeights};

/// Score sheet for one candidate context. `rho` and `e_ctx_norm` are present
/// only in oracle mode (target available); `rho` is also absent when either
/// the baseline error or the correction vanishes.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub candidate_id: usize,
    pub alpha: f64,
    pub value_gap_norm: f64,
    /// alpha * ||v_t - v_x||, the quantity the norm bound scales with.
    pub bound_score: f64,
    pub rho: Option<f64>,
    pub e_ctx_norm: Option<f64>,
}

/// How a context is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Filter on the exact angle (needs the target), then argmax bound score.
    TheoryOracle,
    /// argmax bound score only; no target needed.
    TheoryBound,
    /// Uniform random candidate.
    Random,
    /// Always answer without context.
    NoContext,
    /// argmin of the realized context error (needs the target).
    ExhaustiveBest,
}

impl SelectionMode {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionMode::TheoryOracle => "theory_oracle",
            SelectionMode::TheoryBound => "theory_bound",
            SelectionMode::Random => "random",
            SelectionMode::NoContext => "no_context",
            SelectionMode::ExhaustiveBest => "exhaustive_best",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionPolicy {
    pub mode: SelectionMode,
    /// Number of candidates surviving the coarse filter.
    pub coarse_m: usize,
    /// Strict upper bound on rho in the oracle filter; 1.0 keeps everything
    /// except exactly collinear corrections.
    pub angle_threshold: f64,
}

impl SelectionPolicy {
    pub fn new(mode: SelectionMode) -> Self {
        SelectionPolicy {
            mode,
            coarse_m: 32,
            angle_threshold: 1.0,
        }
    }
}

/// Top-m candidate indices by attention logit <q_x, k_t> / sqrt(d), ties
/// broken toward the lower index. Returns everything (in logit order) when
/// fewer than m candidates exist.
pub fn coarse_filter(
    candidates: &[Vector],
    x: &Vector,
    w: &AttentionWeights,
    m: usize,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(CoreError::InvalidInput("no candidates to filter".into()));
    }
    if m < 1 {
        return Err(CoreError::InvalidInput("coarse filter needs m >= 1".into()));
    }
    let d = w.dim() as f64;
    let q = w.w_q.matvec(x);
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, t)| (i, q.dot(&w.w_k.matvec(t)) / d.sqrt()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(m);
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Score one candidate from a single forward evaluation of [t, x]. With a
/// target the exact pipeline also yields the angle and the realized error.
pub fn score_candidate(
    block: &BlockWeights,
    t: &Vector,
    x: &Vector,
    y: Option<&Vector>,
    candidate_id: usize,
) -> Result<CandidateScore> {
    let delta = attn_delta_single(t, x, &block.attn)?;
    let alpha = delta.alpha_new();
    let value_gap_norm = delta.value_gap().norm();
    let (rho, e_ctx_norm) = match y {
        None => (None, None),
        Some(y) => {
            let g = correction_direct(&delta, &block.mlp);
            let (e_base, e_ctx) = error_pair(block, std::slice::from_ref(t), x, y)?;
            let rho = if e_base.norm() == 0.0 || g.norm() == 0.0 {
                None
            } else {
                Some(context_error_angle(&e_base, &g)?)
            };
            (rho, Some(e_ctx.norm()))
        }
    };
    Ok(CandidateScore {
        candidate_id,
        alpha,
        value_gap_norm,
        bound_score: alpha * value_gap_norm,
        rho,
        e_ctx_norm,
    })
}

/// Apply a selection policy to a score sheet. Returns the chosen candidate id,
/// or None when the policy answers without context (always for NoContext,
/// and for the theory modes when the angle filter empties the set).
pub fn select_context(
    scores: &[CandidateScore],
    policy: &SelectionPolicy,
    stream: Option<RngStream>,
) -> Result<Option<usize>> {
    if policy.mode == SelectionMode::NoContext {
        return Ok(None);
    }
    if scores.is_empty() {
        return Err(CoreError::InvalidInput("no candidate scores".into()));
    }
    match policy.mode {
        SelectionMode::NoContext => unreachable!(),
        SelectionMode::Random => {
            let stream = stream.ok_or_else(|| {
                CoreError::InvalidInput("random selection needs a stream".into())
            })?;
            let (k, _) = stream.next_index(scores.len());
            Ok(Some(scores[k].candidate_id))
        }
        SelectionMode::ExhaustiveBest => {
            let mut best: Option<(usize, f64)> = None;
            for s in scores {
                let e = s.e_ctx_norm.ok_or_else(|| {
                    CoreError::InvalidInput(
                        "exhaustive_best needs oracle fields on every candidate".into(),
                    )
                })?;
                best = match best {
                    None => Some((s.candidate_id, e)),
                    Some((bid, be)) => {
                        if e < be || (e == be && s.candidate_id < bid) {
                            Some((s.candidate_id, e))
                        } else {
                            Some((bid, be))
                        }
                    }
                };
            }
            Ok(best.map(|(id, _)| id))
        }
        SelectionMode::TheoryOracle | SelectionMode::TheoryBound => {
            let apply_angle_filter = policy.mode == SelectionMode::TheoryOracle;
            let mut best: Option<(usize, f64)> = None;
            for s in scores {
                if apply_angle_filter {
                    if let Some(rho) = s.rho {
                        if rho >= policy.angle_threshold {
                            continue;
                        }
                    }
                }
                best = match best {
                    None => Some((s.candidate_id, s.bound_score)),
                    Some((bid, bs)) => {
                        if s.bound_score > bs
                            || (s.bound_score == bs && s.candidate_id < bid)
                        {
                            Some((s.candidate_id, s.bound_score))
                        } else {
                            Some((bid, bs))
                        }
                    }
                };
            }
            Ok(best.map(|(id, _)| id))
        }
    }
}

/// One selection task: a candidate pool, the query, and the target.
#[derive(Debug, Clone)]
pub struct SelectionTask {
    pub candidates: Vec<Vector>,
    pub x: Vector,
    pub y: Vector,
}

/// Aggregate outcome of one policy over a task set.
#[derive(Debug, Clone)]
pub struct PolicyStats {
    pub mode: SelectionMode,
    pub mean_e_norm: f64,
    pub frac_decreased: f64,
    pub mean_delta_e: f64,
}

/// Run every policy over every task. Scoring runs once per (task, candidate)
/// in oracle mode; the random policy draws from a stream derived per task
/// from `rng_seed`.
pub fn evaluate_policies(
    tasks: &[SelectionTask],
    block: &BlockWeights,
    policies: &[SelectionPolicy],
    rng_seed: u64,
) -> Result<Vec<PolicyStats>> {
    if tasks.is_empty() {
        return Err(CoreError::InvalidInput("no tasks to evaluate".into()));
    }
    // score every candidate once, oracle mode (superset of what any policy
    // needs); candidate_id doubles as the index into the sheet
    let mut sheets: Vec<Vec<CandidateScore>> = Vec::with_capacity(tasks.len());
    let mut base_norms: Vec<f64> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let (e_base, _) = error_pair(block, &[], &task.x, &task.y)?;
        base_norms.push(e_base.norm());
        let mut sheet = Vec::with_capacity(task.candidates.len());
        for (id, t) in task.candidates.iter().enumerate() {
            sheet.push(score_candidate(block, t, &task.x, Some(&task.y), id)?);
        }
        sheets.push(sheet);
    }

    let mut out = Vec::with_capacity(policies.len());
    for policy in policies {
        let mut sum_e = 0.0;
        let mut sum_delta = 0.0;
        let mut decreased = 0usize;
        for (i, task) in tasks.iter().enumerate() {
            let kept = coarse_filter(&task.candidates, &task.x, &block.attn, policy.coarse_m)?;
            let sheet: Vec<CandidateScore> =
                kept.iter().map(|&id| sheets[i][id].clone()).collect();
            let stream = derive_stream(rng_seed, i as u64);
            let chosen = select_context(&sheet, policy, Some(stream))?;
            let e_norm = match chosen {
                None => base_norms[i],
                Some(id) => sheets[i]
                    .iter()
                    .find(|s| s.candidate_id == id)
                    .and_then(|s| s.e_ctx_norm)
                    .expect("oracle fields present"),
            };
            sum_e += e_norm;
            sum_delta += e_norm - base_norms[i];
            if e_norm < base_norms[i] {
                decreased += 1;
            }
        }
        let n = tasks.len() as f64;
        out.push(PolicyStats {
            mode: policy.mode,
            mean_e_norm: sum_e / n,
            frac_decreased: decreased as f64 / n,
            mean_delta_e: sum_delta / n,
        });
    }
    Ok(out)
}
