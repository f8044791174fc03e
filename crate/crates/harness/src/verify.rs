//! Invariant suites behind the `verify` subcommand. Each suite samples
//! instances from the configured generator and checks the contracts the
//! theory guarantees; any breach is a violation that fails the run.

use ctxcorr::correction::{incremental_report, single_report};
use ctxcorr::multilayer::{attribute_stack, DeltaConvention};
use ctxcorr::numerics::ActivationKind;
use ctxcorr::selector::SelectionMode;
use ctxcorr::CoreError;

use crate::config::EnsembleConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_select, select_rng_seed, standard_policies};
use crate::generate::generate_instance;

#[derive(Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: usize,
    pub violations: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport {
            name,
            checks: 0,
            violations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSelection {
    All,
    Single,
    MultiContext,
    Layers,
    Selector,
}

impl SuiteSelection {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(SuiteSelection::All),
            "single" => Some(SuiteSelection::Single),
            "multicontext" => Some(SuiteSelection::MultiContext),
            "layers" => Some(SuiteSelection::Layers),
            "selector" => Some(SuiteSelection::Selector),
            _ => None,
        }
    }
}

/// Instance count cap per suite; verify is a gate, not a benchmark.
const SUITE_CAP: usize = 200;

fn integral_tolerance(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Relu => 1e-12,
        _ => 1e-8,
    }
}

pub fn suite_single(cfg: &EnsembleConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("single");
    let n = cfg.n_instances.min(SUITE_CAP);
    let single_cfg = EnsembleConfig {
        layers: 1,
        n_instances: n,
        ..cfg.clone()
    };
    for i in 0..n {
        let inst = generate_instance(&single_cfg, i)?;
        let context = &inst.candidates[i % inst.candidates.len()];
        report.checks += 1;
        match single_report(&inst.stack[0], context, &inst.x, &inst.y, &cfg.quadrature) {
            Err(CoreError::InternalInconsistency(msg)) => {
                report.violations.push(format!("instance {i}: {msg}"));
            }
            Err(other) => return Err(other.into()),
            Ok((_, rep)) => {
                if rep.quadrature_error > integral_tolerance(cfg.activation) {
                    report.violations.push(format!(
                        "instance {i}: integral/direct gap {:e}",
                        rep.quadrature_error
                    ));
                }
                if rep.decreased && !rep.condition_satisfied {
                    report.violations.push(format!(
                        "instance {i}: error decreased but rho {} <= ratio {}",
                        rep.rho, rep.ratio
                    ));
                }
                if !(rep.rho.is_finite() && rep.ratio.is_finite() && rep.norm_bound.is_finite()) {
                    report
                        .violations
                        .push(format!("instance {i}: non-finite report fields"));
                }
            }
        }
    }
    Ok(report)
}

pub fn suite_multicontext(cfg: &EnsembleConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("multicontext");
    let max_existing = (cfg.candidate_count() - 1).min(5);
    let per_size = (cfg.n_instances.min(SUITE_CAP) / max_existing).max(1);
    let gen_cfg = EnsembleConfig {
        layers: 1,
        ..cfg.clone()
    };
    for n_existing in 1..=max_existing {
        for i in 0..per_size {
            let inst = generate_instance(&gen_cfg, (n_existing * 1000 + i) % cfg.n_instances.max(1))?;
            let existing: Vec<_> = inst.candidates[1..=n_existing].to_vec();
            report.checks += 1;
            match incremental_report(
                &inst.stack[0],
                &existing,
                &inst.candidates[0],
                &inst.x,
                &inst.y,
                &cfg.quadrature,
            ) {
                Err(CoreError::InternalInconsistency(msg)) => report
                    .violations
                    .push(format!("n={n_existing} instance {i}: {msg}")),
                Err(other) => return Err(other.into()),
                Ok((_, rep)) => {
                    let gap = (&(&rep.e_ctx - &rep.e_base) - &rep.g_direct).norm_inf();
                    if gap > 1e-12 {
                        report.violations.push(format!(
                            "n={n_existing} instance {i}: incremental identity gap {gap:e}"
                        ));
                    }
                }
            }
        }
    }
    Ok(report)
}

pub fn suite_layers(cfg: &EnsembleConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("layers");
    let deep_cfg = EnsembleConfig {
        layers: cfg.layers.max(2),
        n_instances: cfg.n_instances.min(50),
        ..cfg.clone()
    };
    for i in 0..deep_cfg.n_instances {
        let inst = generate_instance(&deep_cfg, i)?;
        let context = &inst.candidates[i % inst.candidates.len()];
        report.checks += 1;
        let attribution = attribute_stack(
            &inst.stack,
            context,
            &inst.x,
            &inst.y,
            &cfg.quadrature,
            DeltaConvention::CommonState,
        )?;
        if let Err(e) = attribution.validate_bounds(1e-8) {
            report.violations.push(format!("instance {i}: {e}"));
        }
    }

    // depth-1 reduction against the single-layer pipeline
    let shallow_cfg = EnsembleConfig {
        layers: 1,
        n_instances: 1,
        ..cfg.clone()
    };
    let inst = generate_instance(&shallow_cfg, 0)?;
    report.checks += 1;
    let attribution = attribute_stack(
        &inst.stack,
        &inst.candidates[0],
        &inst.x,
        &inst.y,
        &cfg.quadrature,
        DeltaConvention::CommonState,
    )?;
    let (_, rep) = single_report(
        &inst.stack[0],
        &inst.candidates[0],
        &inst.x,
        &inst.y,
        &cfg.quadrature,
    )?;
    let gap = (&attribution.g_total - &rep.g_direct).norm_inf();
    if gap > 1e-12 || attribution.residual.norm_inf() > 1e-12 {
        report.violations.push(format!(
            "depth-1 reduction gap {gap:e}, residual {:e}",
            attribution.residual.norm_inf()
        ));
    }
    Ok(report)
}

pub fn suite_selector(cfg: &EnsembleConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("selector");
    let select_cfg = EnsembleConfig {
        layers: 1,
        n_instances: cfg.n_instances.min(50),
        ..cfg.clone()
    };
    let (student, tasks, _rows, stats) = run_select(&select_cfg)?;
    report.checks += 1;

    let reference = ctxcorr::selector::evaluate_policies(
        &tasks,
        &student[0],
        &standard_policies(&select_cfg),
        select_rng_seed(&select_cfg),
    )?;
    for (mine, theirs) in stats.iter().zip(&reference) {
        if (mine.mean_e_norm - theirs.mean_e_norm).abs() > 1e-12 {
            report.violations.push(format!(
                "{}: harness mean {} disagrees with library mean {}",
                mine.mode.name(),
                mine.mean_e_norm,
                theirs.mean_e_norm
            ));
        }
    }

    let best = stats
        .iter()
        .find(|s| s.mode == SelectionMode::ExhaustiveBest)
        .expect("standard policies include exhaustive_best");
    for s in &stats {
        report.checks += 1;
        if best.mean_e_norm > s.mean_e_norm + 1e-12 {
            report.violations.push(format!(
                "exhaustive_best mean {} above {} mean {}",
                best.mean_e_norm,
                s.mode.name(),
                s.mean_e_norm
            ));
        }
    }

    let no_ctx = stats
        .iter()
        .find(|s| s.mode == SelectionMode::NoContext)
        .expect("standard policies include no_context");
    report.checks += 1;
    if no_ctx.mean_delta_e.abs() > 1e-12 {
        report.violations.push(format!(
            "no_context mean error change {} should be 0",
            no_ctx.mean_delta_e
        ));
    }
    Ok(report)
}

pub fn run_suites(cfg: &EnsembleConfig, which: SuiteSelection) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    if matches!(which, SuiteSelection::All | SuiteSelection::Single) {
        out.push(suite_single(cfg)?);
    }
    if matches!(which, SuiteSelection::All | SuiteSelection::MultiContext) {
        out.push(suite_multicontext(cfg)?);
    }
    if matches!(which, SuiteSelection::All | SuiteSelection::Layers) {
        out.push(suite_layers(cfg)?);
    }
    if matches!(which, SuiteSelection::All | SuiteSelection::Selector) {
        out.push(suite_selector(cfg)?);
    }
    if out.is_empty() {
        return Err(HarnessError::Config("no suite selected".into()));
    }
    Ok(out)
}
