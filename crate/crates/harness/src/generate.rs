//! Deterministic synthetic task generation.
//!
//! Each instance pairs a random student stack with a teacher that is a
//! perturbed copy of it; the target is the teacher's readout on the gold
//! context. Contexts therefore matter causally: the student's own gold
//! correction roughly cancels its baseline error, and noisier candidate
//! copies erode that cancellation, which creates the relevance gradient the
//! trend and selection studies rely on.

use ctxcorr::numerics::{
    derive_stream, sample_gaussian_matrix, sample_gaussian_vector, sample_unit_vector,
    ActivationKind, Matrix, RngStream, Vector,
};
use ctxcorr::selector::SelectionTask;
use ctxcorr::transformer::{
    stack_forward, AttentionWeights, BlockWeights, MlpWeights, TokenSequence, Visibility,
};

use crate::config::EnsembleConfig;
use crate::error::{HarnessError, Result};

/// Relative size of the teacher's deviation from the student.
const TEACHER_DRIFT: f64 = 0.3;

/// Degenerate instances (baseline error below this) are regenerated.
const DEGENERATE_E_BASE: f64 = 1e-8;

const MAX_ATTEMPTS: u64 = 100;

// sub-stream components of one instance attempt
const COMP_STUDENT: u64 = 0;
const COMP_TEACHER: u64 = 1;
const COMP_TOKENS: u64 = 2;
const COMP_NOISE: u64 = 3;
const N_COMPONENTS: u64 = 4;

/// Stream id space reserved for the shared selection-study student.
const SHARED_STUDENT_INDEX: u64 = u64::MAX;

fn component_stream(seed: u64, instance: u64, attempt: u64, component: u64) -> RngStream {
    // wrapping keeps the sentinel SHARED_STUDENT_INDEX usable; ordinary
    // instance indices stay far below the wrap point
    let packed = instance
        .wrapping_mul(MAX_ATTEMPTS)
        .wrapping_add(attempt)
        .wrapping_mul(N_COMPONENTS)
        .wrapping_add(component);
    derive_stream(seed, packed)
}

/// One generated task instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub stack: Vec<BlockWeights>,
    pub teacher: Vec<BlockWeights>,
    /// Gold context first, then one noise-corrupted copy per configured level.
    pub candidates: Vec<Vector>,
    pub x: Vector,
    pub y: Vector,
}

fn sample_stack(
    mut stream: RngStream,
    layers: usize,
    d: usize,
    hidden: usize,
    std: f64,
    kind: ActivationKind,
) -> Result<Vec<BlockWeights>> {
    let entry_std = std / (d as f64).sqrt();
    let mut stack = Vec::with_capacity(layers);
    for _ in 0..layers {
        let (w_q, s) = sample_gaussian_matrix(stream, d, d, entry_std)?;
        let (w_k, s) = sample_gaussian_matrix(s, d, d, entry_std)?;
        let (w_v, s) = sample_gaussian_matrix(s, d, d, entry_std)?;
        let (w_o, s) = sample_gaussian_matrix(s, d, d, entry_std)?;
        let (w1, s) = sample_gaussian_matrix(s, hidden, d, entry_std)?;
        let (w2, s) = sample_gaussian_matrix(s, d, hidden, entry_std)?;
        stream = s;
        let attn = AttentionWeights::new(w_q, w_k, w_v, w_o)?;
        let mlp = MlpWeights::new(w1, w2, kind)?;
        stack.push(BlockWeights::new(attn, mlp)?);
    }
    Ok(stack)
}

fn perturb_matrix(m: &Matrix, stream: RngStream, std: f64) -> Result<(Matrix, RngStream)> {
    let (noise, s) = sample_gaussian_matrix(stream, m.rows(), m.cols(), std)?;
    Ok((m.add(&noise), s))
}

fn perturbed_stack(
    stack: &[BlockWeights],
    mut stream: RngStream,
    std: f64,
) -> Result<Vec<BlockWeights>> {
    let drift = TEACHER_DRIFT * std;
    let mut out = Vec::with_capacity(stack.len());
    for block in stack {
        let (w_q, s) = perturb_matrix(&block.attn.w_q, stream, drift)?;
        let (w_k, s) = perturb_matrix(&block.attn.w_k, s, drift)?;
        let (w_v, s) = perturb_matrix(&block.attn.w_v, s, drift)?;
        let (w_o, s) = perturb_matrix(&block.attn.w_o, s, drift)?;
        let (w1, s) = perturb_matrix(&block.mlp.w1, s, drift)?;
        let (w2, s) = perturb_matrix(&block.mlp.w2, s, drift)?;
        stream = s;
        let attn = AttentionWeights::new(w_q, w_k, w_v, w_o)?;
        let mlp = MlpWeights::new(w1, w2, block.mlp.kind)?;
        out.push(BlockWeights::new(attn, mlp)?);
    }
    Ok(out)
}

fn candidates_from(
    gold: &Vector,
    levels: &[f64],
    mut stream: RngStream,
    d: usize,
) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(1 + levels.len());
    out.push(gold.clone());
    for &eta in levels {
        let (u, s) = sample_unit_vector(stream, d)?;
        stream = s;
        out.push(gold.add_scaled(eta, &u));
    }
    Ok(out)
}

fn readout(stack: &[BlockWeights], context: &[Vector], x: &Vector) -> Result<Vector> {
    let seq = if context.is_empty() {
        TokenSequence::single(x.clone())
    } else {
        TokenSequence::with_context(context.to_vec(), x.clone())?
    };
    Ok(stack_forward(&seq, stack, Visibility::Causal)?.output().clone())
}

fn try_instance(
    cfg: &EnsembleConfig,
    student: Option<&[BlockWeights]>,
    index: u64,
    attempt: u64,
) -> Result<Option<Instance>> {
    let stack = match student {
        Some(shared) => shared.to_vec(),
        None => sample_stack(
            component_stream(cfg.seed, index, attempt, COMP_STUDENT),
            cfg.layers,
            cfg.d,
            cfg.hidden,
            cfg.weight_std,
            cfg.activation,
        )?,
    };
    let entry_std = cfg.weight_std / (cfg.d as f64).sqrt();
    let teacher = perturbed_stack(
        &stack,
        component_stream(cfg.seed, index, attempt, COMP_TEACHER),
        entry_std,
    )?;

    let tokens = component_stream(cfg.seed, index, attempt, COMP_TOKENS);
    let (gold, s) = sample_gaussian_vector(tokens, cfg.d, 1.0)?;
    let (x, _) = sample_gaussian_vector(s, cfg.d, 1.0)?;
    let candidates = candidates_from(
        &gold,
        &cfg.context_noise_levels,
        component_stream(cfg.seed, index, attempt, COMP_NOISE),
        cfg.d,
    )?;

    let y = readout(&teacher, std::slice::from_ref(&gold), &x)?;
    let base = readout(&stack, &[], &x)?;
    if (&base - &y).norm() < DEGENERATE_E_BASE {
        return Ok(None); // bad-case analogue: regenerate from the next sub-stream
    }
    Ok(Some(Instance {
        stack,
        teacher,
        candidates,
        x,
        y,
    }))
}

/// Generate instance `index` of the configured ensemble. Deterministic in
/// (cfg, index); degenerate draws advance to the next sub-stream.
pub fn generate_instance(cfg: &EnsembleConfig, index: usize) -> Result<Instance> {
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(instance) = try_instance(cfg, None, index as u64, attempt)? {
            return Ok(instance);
        }
    }
    Err(HarnessError::Generation(format!(
        "instance {index}: {MAX_ATTEMPTS} consecutive degenerate draws"
    )))
}

/// Selection-study tasks share one student so that every policy is judged
/// against the same model; targets still come from per-task teachers.
pub fn generate_selection_tasks(
    cfg: &EnsembleConfig,
) -> Result<(Vec<BlockWeights>, Vec<SelectionTask>)> {
    let student = sample_stack(
        component_stream(cfg.seed, SHARED_STUDENT_INDEX, 0, COMP_STUDENT),
        cfg.layers,
        cfg.d,
        cfg.hidden,
        cfg.weight_std,
        cfg.activation,
    )?;
    let mut tasks = Vec::with_capacity(cfg.n_instances);
    for index in 0..cfg.n_instances {
        let mut found = None;
        for attempt in 0..MAX_ATTEMPTS {
            if let Some(instance) = try_instance(cfg, Some(&student), index as u64, attempt)? {
                found = Some(instance);
                break;
            }
        }
        let instance = found.ok_or_else(|| {
            HarnessError::Generation(format!(
                "selection task {index}: {MAX_ATTEMPTS} consecutive degenerate draws"
            ))
        })?;
        tasks.push(SelectionTask {
            candidates: instance.candidates,
            x: instance.x,
            y: instance.y,
        });
    }
    Ok((student, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EnsembleConfig {
        EnsembleConfig {
            d: 6,
            hidden: 6,
            n_instances: 4,
            context_noise_levels: vec![0.0, 0.5, 1.0],
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_instance(&cfg, 3).unwrap();
        let b = generate_instance(&cfg, 3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.stack[0].attn.w_q, b.stack[0].attn.w_q);
    }

    #[test]
    fn zero_noise_level_copies_the_gold_context() {
        let cfg = small_cfg();
        let inst = generate_instance(&cfg, 0).unwrap();
        assert_eq!(inst.candidates.len(), 4);
        assert_eq!(inst.candidates[0], inst.candidates[1]); // level 0.0
        assert_ne!(inst.candidates[0], inst.candidates[2]);
    }

    #[test]
    fn baseline_error_is_not_degenerate() {
        let cfg = small_cfg();
        for i in 0..4 {
            let inst = generate_instance(&cfg, i).unwrap();
            let base = readout(&inst.stack, &[], &inst.x).unwrap();
            assert!((&base - &inst.y).norm() >= DEGENERATE_E_BASE);
        }
    }

    #[test]
    fn some_candidate_decreases_the_error() {
        // the gold context nearly cancels the baseline error by construction,
        // so over a small batch at least one instance must improve
        let cfg = EnsembleConfig {
            n_instances: 20,
            ..small_cfg()
        };
        let mut improved = 0;
        for i in 0..cfg.n_instances {
            let inst = generate_instance(&cfg, i).unwrap();
            let base = (&readout(&inst.stack, &[], &inst.x).unwrap() - &inst.y).norm();
            let with_gold = (&readout(
                &inst.stack,
                std::slice::from_ref(&inst.candidates[0]),
                &inst.x,
            )
            .unwrap()
                - &inst.y)
                .norm();
            if with_gold < base {
                improved += 1;
            }
        }
        assert!(improved > 0, "no instance improved with the gold context");
    }

    #[test]
    fn selection_tasks_share_the_student() {
        let cfg = small_cfg();
        let (student, tasks) = generate_selection_tasks(&cfg).unwrap();
        assert_eq!(tasks.len(), cfg.n_instances);
        assert_eq!(student.len(), cfg.layers);
        assert_eq!(tasks[0].candidates.len(), cfg.candidate_count());
    }
}
