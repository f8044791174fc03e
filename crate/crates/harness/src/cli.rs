//! Command-line driver. Exit codes: 0 success, 1 invariant violation or
//! runtime failure, 2 configuration/usage error.

use std::path::PathBuf;

use ctxcorr::multilayer::{attribute_stack, DeltaConvention};

use crate::config::EnsembleConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{attribution_records, run_scatter, run_select, InstanceRecord};
use crate::generate::generate_instance;
use crate::output::{
    emit_outputs, records_csv, scatter_svg, selection_csv, summary_json, trends_csv, Summary,
    TrendSeries,
};
use crate::stats::{decile_trend, failure_distribution, pearson};
use crate::verify::{run_suites, SuiteSelection};

const USAGE: &str = "\
ctxcorr — contextual-correction analysis of residual attention/MLP blocks

USAGE:
  ctxcorr <COMMAND> [FLAGS]

COMMANDS:
  verify      run invariant suites; exit 0 on full pass, 1 on any violation
  ensemble    run the scatter ensemble and write records/trends/summary
  select      run the context-selection study and write selection results
  attribute   attribute one instance across layers and write the rows

FLAGS:
  --config PATH    JSON run configuration (defaults used when omitted)
  --out DIR        output directory (overrides the configured output_dir)
  --suite NAME     verify only: all | single | multicontext | layers | selector
  --instance N     attribute only: instance index (default 0)
  --seed N         override the configured master seed
  --help           show this text

EXIT CODES:
  0 success, 1 invariant violation or runtime failure, 2 configuration error
";

#[derive(Debug)]
struct Cli {
    command: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    suite: SuiteSelection,
    instance: usize,
    seed: Option<u64>,
}

fn parse_args(args: &[String]) -> std::result::Result<Cli, String> {
    let mut it = args.iter();
    let command = match it.next() {
        Some(c) if c == "--help" || c == "-h" => return Err(String::new()),
        Some(c) => c.clone(),
        None => return Err("missing command".into()),
    };
    if !matches!(command.as_str(), "verify" | "ensemble" | "select" | "attribute") {
        return Err(format!("unknown command {command:?}"));
    }
    let mut cli = Cli {
        command,
        config: None,
        out: None,
        suite: SuiteSelection::All,
        instance: 0,
        seed: None,
    };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => return Err(String::new()),
            "--config" => {
                let v = it.next().ok_or("missing value for --config")?;
                cli.config = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = it.next().ok_or("missing value for --out")?;
                cli.out = Some(PathBuf::from(v));
            }
            "--suite" => {
                let v = it.next().ok_or("missing value for --suite")?;
                cli.suite = SuiteSelection::parse(v)
                    .ok_or_else(|| format!("unknown suite {v:?}"))?;
            }
            "--instance" => {
                let v = it.next().ok_or("missing value for --instance")?;
                cli.instance = v
                    .parse()
                    .map_err(|_| format!("invalid instance index {v:?}"))?;
            }
            "--seed" => {
                let v = it.next().ok_or("missing value for --seed")?;
                cli.seed = Some(v.parse().map_err(|_| format!("invalid seed {v:?}"))?);
            }
            other => return Err(format!("unknown flag {other:?}")),
        }
    }
    Ok(cli)
}

fn load_config(cli: &Cli) -> Result<EnsembleConfig> {
    let mut cfg = match &cli.config {
        Some(path) => EnsembleConfig::load(path)?,
        None => EnsembleConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn cmd_verify(cfg: &EnsembleConfig, suite: SuiteSelection) -> Result<i32> {
    let reports = run_suites(cfg, suite)?;
    let mut failed = false;
    for r in &reports {
        if r.passed() {
            println!("[{}] pass ({} checks)", r.name, r.checks);
        } else {
            failed = true;
            println!("[{}] FAIL ({} checks, {} violations)", r.name, r.checks, r.violations.len());
            for v in &r.violations {
                eprintln!("violation [{}]: {v}", r.name);
            }
        }
    }
    Ok(if failed { 1 } else { 0 })
}

/// Trend series and summary statistics from the layer-0 (totals) rows.
fn ensemble_outputs(records: &[InstanceRecord]) -> Result<(Vec<TrendSeries>, Summary, Vec<(f64, f64)>)> {
    let totals: Vec<&InstanceRecord> = records.iter().filter(|r| r.layer == 0).collect();
    let g: Vec<f64> = totals.iter().map(|r| r.g_norm).collect();
    let de: Vec<f64> = totals.iter().map(|r| r.delta_e_norm).collect();
    let alpha_dv: Vec<f64> = totals.iter().map(|r| r.alpha * r.dv_norm).collect();

    let pearson_de_g = pearson(&de, &g)?;
    let pearson_g_bound = pearson(&g, &alpha_dv)?;

    let de_vs_g: Vec<(f64, f64)> = g.iter().copied().zip(de.iter().copied()).collect();
    let g_vs_bound: Vec<(f64, f64)> = alpha_dv.iter().copied().zip(g.iter().copied()).collect();
    let mut trends = vec![
        TrendSeries {
            name: "g_vs_alpha_dv".into(),
            bins: decile_trend(&g_vs_bound)?,
        },
        TrendSeries {
            name: "de_vs_g".into(),
            bins: decile_trend(&de_vs_g)?,
        },
    ];

    let dist = failure_distribution(
        &totals.iter().map(|r| (*r).clone()).collect::<Vec<_>>(),
    );
    // distribution of the condition quantities on error-decreasing records
    for (name, values) in [
        ("decreased_rho_deciles", &dist.decreased_rho),
        ("decreased_ratio_deciles", &dist.decreased_ratio),
    ] {
        if values.len() >= 10 {
            let pts: Vec<(f64, f64)> = values.iter().map(|v| (*v, *v)).collect();
            trends.push(TrendSeries {
                name: name.into(),
                bins: decile_trend(&pts)?,
            });
        }
    }

    let residual_rel_mean = if totals.is_empty() {
        0.0
    } else {
        totals.iter().map(|r| r.residual_rel).sum::<f64>() / totals.len() as f64
    };
    let summary = Summary::from_parts(
        pearson_de_g,
        pearson_g_bound,
        &dist,
        totals.len(),
        residual_rel_mean,
    );
    Ok((trends, summary, de_vs_g))
}

fn cmd_ensemble(cfg: &EnsembleConfig) -> Result<i32> {
    let records = run_scatter(cfg)?;
    let (trends, summary, scatter) = ensemble_outputs(&records)?;
    let files = [
        ("records.csv", records_csv(&records)),
        ("trends.csv", trends_csv(&trends)),
        ("summary.json", summary_json(&summary)),
        (
            "scatter.svg",
            scatter_svg(&scatter, "correction norm", "error change norm"),
        ),
    ];
    emit_outputs(cfg, &cfg.output_dir, &files)?;
    println!(
        "ensemble: {} records -> {} (pearson de~g {:.3}, g~alpha*dv {:.3})",
        records.len(),
        cfg.output_dir.display(),
        summary.pearson_de_g,
        summary.pearson_g_bound
    );
    Ok(0)
}

fn cmd_select(cfg: &EnsembleConfig) -> Result<i32> {
    let (_, _, rows, stats) = run_select(cfg)?;
    let files = [("selection.csv", selection_csv(&rows))];
    emit_outputs(cfg, &cfg.output_dir, &files)?;
    println!("policy            mean_e      frac_decreased  mean_delta_e");
    for s in &stats {
        println!(
            "{:<16}  {:<10.6}  {:<14.3}  {:+.6}",
            s.mode.name(),
            s.mean_e_norm,
            s.frac_decreased,
            s.mean_delta_e
        );
    }
    Ok(0)
}

fn cmd_attribute(cfg: &EnsembleConfig, instance: usize) -> Result<i32> {
    let inst = generate_instance(cfg, instance)?;
    let attribution = attribute_stack(
        &inst.stack,
        &inst.candidates[instance % inst.candidates.len()],
        &inst.x,
        &inst.y,
        &cfg.quadrature,
        DeltaConvention::CommonState,
    )?;
    let rows = attribution_records(instance, &attribution);
    let files = [("attribution.csv", records_csv(&rows))];
    emit_outputs(cfg, &cfg.output_dir, &files)?;
    println!(
        "instance {instance}: |g_total| {:.6e}, bound {:.6e}, residual_rel {:.3e}, rho {:.4}",
        attribution.g_total.norm(),
        attribution.bound_total,
        attribution.residual_rel(),
        attribution.rho_total
    );
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli)?;
    match cli.command.as_str() {
        "verify" => cmd_verify(&cfg, cli.suite),
        "ensemble" => cmd_ensemble(&cfg),
        "select" => cmd_select(&cfg),
        "attribute" => cmd_attribute(&cfg, cli.instance),
        _ => unreachable!("validated in parse_args"),
    }
}

pub fn cli_main(args: &[String]) -> i32 {
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(msg) if msg.is_empty() => {
            println!("{USAGE}");
            return 0;
        }
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(HarnessError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
