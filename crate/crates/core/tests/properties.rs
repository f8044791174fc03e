//! Property suites over randomly drawn instances: softmax algebra, bound
//! inequalities, the exact decomposition, and the integral/direct agreement.

use ctxcorr::correction::{
    attn_delta_single, classify_failure, correction_direct, correction_integral, error_pair,
    necessary_condition, FailureClass, NORM_BOUND_SLACK,
};
use ctxcorr::numerics::{
    activation_jacobian_diag, activation_lipschitz, derive_stream, operator_norm,
    sample_gaussian_matrix, sample_gaussian_vector, softmax_row, ActivationKind, QuadratureConfig,
    RngStream, Vector,
};
use ctxcorr::transformer::{AttentionWeights, BlockWeights, MlpWeights};
use proptest::prelude::*;

fn block_from_seed(seed: u64, d: usize, kind: ActivationKind) -> (BlockWeights, RngStream) {
    let std = 1.0 / (d as f64).sqrt();
    let s = derive_stream(seed, 0);
    let (w_q, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w_k, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w_v, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w_o, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w1, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let (w2, s) = sample_gaussian_matrix(s, d, d, std).unwrap();
    let attn = AttentionWeights::new(w_q, w_k, w_v, w_o).unwrap();
    let mlp = MlpWeights::new(w1, w2, kind).unwrap();
    (BlockWeights::new(attn, mlp).unwrap(), s)
}

proptest! {
    #[test]
    fn softmax_sums_to_one(entries in prop::collection::vec(-30.0f64..30.0, 1..32)) {
        let v = Vector::new(entries);
        let p = softmax_row(&v).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-15);
        prop_assert!(p.iter().all(|&w| w > 0.0));
    }

    // entries and shift live on a 2^-20 grid so v + shift is exact in f64;
    // max-subtraction then reproduces identical score gaps on both sides
    #[test]
    fn softmax_is_shift_invariant_for_exact_shifts(
        grid in prop::collection::vec(-31_457_280i64..31_457_280, 1..32),
        shift_grid in -52_428_800i64..52_428_800,
    ) {
        let scale = (2.0f64).powi(-20);
        let entries: Vec<f64> = grid.iter().map(|&g| g as f64 * scale).collect();
        let shift = shift_grid as f64 * scale;
        let p = softmax_row(&Vector::new(entries.clone())).unwrap();
        let shifted = Vector::new(entries.iter().map(|e| e + shift).collect());
        let q = softmax_row(&shifted).unwrap();
        for k in 0..p.len() {
            prop_assert!((p[k] - q[k]).abs() <= 1e-15);
        }
    }

    #[test]
    fn operator_norm_dominates_unit_directions(seed in any::<u64>()) {
        let s = derive_stream(seed, 1);
        let (m, s) = sample_gaussian_matrix(s, 7, 5, 1.0).unwrap();
        let norm = operator_norm(&m, 1e-10).unwrap();
        let mut stream = s;
        for _ in 0..100 {
            let (u, next) = sample_gaussian_vector(stream, 5, 1.0).unwrap();
            stream = next;
            let un = u.norm();
            prop_assume!(un > 0.0);
            prop_assert!(m.matvec(&u).norm() / un <= norm + 1e-12);
        }
    }

    #[test]
    fn jacobian_diag_respects_lipschitz(seed in any::<u64>()) {
        let (u, _) = sample_gaussian_vector(derive_stream(seed, 2), 64, 4.0).unwrap();
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Gelu] {
            let lip = activation_lipschitz(kind);
            let diag = activation_jacobian_diag(kind, &u);
            prop_assert!(diag.iter().all(|d| d.abs() <= lip + 1e-12));
        }
    }

    #[test]
    fn decomposition_is_exact_per_coordinate(seed in any::<u64>(), relu in any::<bool>()) {
        let kind = if relu { ActivationKind::Relu } else { ActivationKind::Tanh };
        let (block, s) = block_from_seed(seed, 8, kind);
        let (t, s) = sample_gaussian_vector(s, 8, 1.0).unwrap();
        let (x, s) = sample_gaussian_vector(s, 8, 1.0).unwrap();
        let (y, _) = sample_gaussian_vector(s, 8, 1.0).unwrap();

        let delta = attn_delta_single(&t, &x, &block.attn).unwrap();
        let g = correction_direct(&delta, &block.mlp);
        let (e_base, e_ctx) = error_pair(&block, std::slice::from_ref(&t), &x, &y).unwrap();
        let gap = (&(&e_ctx - &e_base) - &g).norm_inf();
        prop_assert!(gap <= 1e-12, "decomposition gap {gap:e}");
    }

    #[test]
    fn integral_agrees_with_direct(seed in any::<u64>(), relu in any::<bool>()) {
        let kind = if relu { ActivationKind::Relu } else { ActivationKind::Tanh };
        let (block, s) = block_from_seed(seed, 6, kind);
        let (t, s) = sample_gaussian_vector(s, 6, 1.0).unwrap();
        let (x, _) = sample_gaussian_vector(s, 6, 1.0).unwrap();
        let delta = attn_delta_single(&t, &x, &block.attn).unwrap();
        let g_direct = correction_direct(&delta, &block.mlp);
        let (g_int, est) = correction_integral(&delta, &block.mlp, &QuadratureConfig::default()).unwrap();
        let gap = (&g_int - &g_direct).norm_inf();
        match kind {
            ActivationKind::Relu => {
                prop_assert_eq!(est, 0.0);
                prop_assert!(gap <= 1e-12, "relu gap {gap:e}");
            }
            _ => prop_assert!(gap <= 1e-8, "smooth gap {gap:e}"),
        }
    }

    #[test]
    fn norm_bound_and_direction_condition(seed in any::<u64>()) {
        let (block, s) = block_from_seed(seed, 8, ActivationKind::Relu);
        let (t, s) = sample_gaussian_vector(s, 8, 1.0).unwrap();
        let (x, s) = sample_gaussian_vector(s, 8, 1.0).unwrap();
        let (y, _) = sample_gaussian_vector(s, 8, 1.0).unwrap();

        let delta = attn_delta_single(&t, &x, &block.attn).unwrap();
        let g = correction_direct(&delta, &block.mlp);
        let bound =
            ctxcorr::correction::norm_bound_single(&delta, &block.mlp, &block.attn).unwrap();
        prop_assert!(g.norm() <= bound * (1.0 + NORM_BOUND_SLACK));

        let (e_base, e_ctx) = error_pair(&block, std::slice::from_ref(&t), &x, &y).unwrap();
        prop_assume!(e_base.norm() > 0.0);
        let cond = necessary_condition(&e_base, &e_ctx, &g).unwrap();
        if cond.decreased {
            prop_assert!(cond.condition_satisfied, "rho {} ratio {}", cond.rho, cond.ratio);
        }
        let class = classify_failure(cond.decreased, cond.rho, cond.ratio);
        if cond.decreased {
            prop_assert_eq!(class, FailureClass::None);
        } else {
            prop_assert!(class == FailureClass::Angle || class == FailureClass::Norm);
        }
    }

    #[test]
    fn incremental_identity_over_context_sizes(seed in any::<u64>(), n in 1usize..5) {
        let (block, s) = block_from_seed(seed, 6, ActivationKind::Tanh);
        let mut stream = s;
        let mut existing = Vec::with_capacity(n);
        for _ in 0..n {
            let (t, next) = sample_gaussian_vector(stream, 6, 1.0).unwrap();
            stream = next;
            existing.push(t);
        }
        let (t_new, s) = sample_gaussian_vector(stream, 6, 1.0).unwrap();
        let (x, s) = sample_gaussian_vector(s, 6, 1.0).unwrap();
        let (y, _) = sample_gaussian_vector(s, 6, 1.0).unwrap();

        let delta =
            ctxcorr::correction::attn_delta_incremental(&existing, &t_new, &x, &block.attn).unwrap();
        let g = correction_direct(&delta, &block.mlp);

        let (_, e_old) = error_pair(&block, &existing, &x, &y).unwrap();
        let mut full = existing.clone();
        full.push(t_new.clone());
        let (_, e_new) = error_pair(&block, &full, &x, &y).unwrap();
        let gap = (&(&e_new - &e_old) - &g).norm_inf();
        prop_assert!(gap <= 1e-12, "incremental identity gap {gap:e}");
    }
}
