//! Deterministic file outputs: records.csv, trends.csv, summary.json,
//! scatter.svg, and manifest.json with content digests. Floats are rendered
//! with 17 significant digits so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::EnsembleConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{InstanceRecord, SelectionRow};
use crate::stats::FailureDistribution;

/// 17 significant digits; round-trips every finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const RECORDS_HEADER: &str = "instance_id,layer,n_contexts,alpha,dv_norm,g_norm,g_bound,rho,ratio,e0_norm,e1_norm,delta_e_norm,decreased,failure_class,residual_rel";

pub fn records_csv(records: &[InstanceRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.instance_id,
            r.layer,
            r.n_contexts,
            fmt_f64(r.alpha),
            fmt_f64(r.dv_norm),
            fmt_f64(r.g_norm),
            fmt_f64(r.g_bound),
            fmt_f64(r.rho),
            fmt_f64(r.ratio),
            fmt_f64(r.e0_norm),
            fmt_f64(r.e1_norm),
            fmt_f64(r.delta_e_norm),
            r.decreased,
            r.failure_class.as_str(),
            fmt_f64(r.residual_rel),
        );
    }
    out
}

/// A named decile series for trends.csv.
#[derive(Debug, Clone)]
pub struct TrendSeries {
    pub name: String,
    pub bins: Vec<(f64, f64)>,
}

pub fn trends_csv(series: &[TrendSeries]) -> String {
    let mut out = String::from("trend,bin,bin_center,median\n");
    for s in series {
        for (i, (x, y)) in s.bins.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.name, i, fmt_f64(*x), fmt_f64(*y));
        }
    }
    out
}

pub fn selection_csv(rows: &[SelectionRow]) -> String {
    let mut out = String::from("task_id,policy,chosen_id,e_norm,decreased\n");
    for r in rows {
        let chosen = r.chosen.map_or(-1i64, |c| c as i64);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.task_id,
            r.policy.name(),
            chosen,
            fmt_f64(r.e_norm),
            r.decreased
        );
    }
    out
}

/// Headline statistics of one ensemble run.
#[derive(Debug, Clone)]
pub struct Summary {
    pub pearson_de_g: f64,
    pub pearson_g_bound: f64,
    pub counts: (usize, usize, usize), // none, angle, norm
    pub n: usize,
    pub residual_rel_mean: f64,
}

impl Summary {
    pub fn from_parts(
        pearson_de_g: f64,
        pearson_g_bound: f64,
        dist: &FailureDistribution,
        n: usize,
        residual_rel_mean: f64,
    ) -> Self {
        Summary {
            pearson_de_g,
            pearson_g_bound,
            counts: (dist.none, dist.angle, dist.norm),
            n,
            residual_rel_mean,
        }
    }
}

pub fn summary_json(s: &Summary) -> String {
    format!(
        "{{\"pearson_de_g\":{},\"pearson_g_bound\":{},\"counts\":{{\"none\":{},\"angle\":{},\"norm\":{}}},\"n\":{},\"residual_rel_mean\":{}}}\n",
        fmt_f64(s.pearson_de_g),
        fmt_f64(s.pearson_g_bound),
        s.counts.0,
        s.counts.1,
        s.counts.2,
        s.n,
        fmt_f64(s.residual_rel_mean),
    )
}

/// Plain point cloud with axes; no styling, no interactivity.
pub fn scatter_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 48.0;
    let (mut x_max, mut y_max) = (0.0f64, 0.0f64);
    for (x, y) in points {
        x_max = x_max.max(*x);
        y_max = y_max.max(*y);
    }
    if x_max == 0.0 {
        x_max = 1.0;
    }
    if y_max == 0.0 {
        y_max = 1.0;
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(
        out,
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>",
        H - M
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>",
        W / 2.0,
        H - 12.0,
        x_label
    );
    let _ = writeln!(
        out,
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        y_label
    );
    for (x, y) in points {
        let px = M + (x / x_max) * (W - 2.0 * M);
        let py = (H - M) - (y / y_max) * (H - 2.0 * M);
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.5\"/>",
            px, py
        );
    }
    out.push_str("</svg>\n");
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(String, String)> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| HarnessError::io(&path, e))?;
    Ok((name.to_string(), sha256_hex(content.as_bytes())))
}

/// Write every named file, then a manifest echoing the configuration, the
/// seed, the crate version, and the per-file digests.
pub fn emit_outputs(
    cfg: &EnsembleConfig,
    dir: &Path,
    files: &[(&str, String)],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut digests = BTreeMap::new();
    let mut written = Vec::new();
    for (name, content) in files {
        let (name, digest) = write_file(dir, name, content)?;
        written.push(dir.join(&name));
        digests.insert(name, digest);
    }
    let manifest = serde_json::json!({
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "master_seed": cfg.seed,
        "config": cfg,
        "digests": digests,
    });
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| HarnessError::io(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxcorr::correction::FailureClass;

    fn record(i: usize) -> InstanceRecord {
        InstanceRecord {
            instance_id: i,
            layer: 0,
            n_contexts: 1,
            alpha: 0.5,
            dv_norm: 1.0,
            g_norm: 0.25,
            g_bound: 2.0,
            rho: 0.1,
            ratio: 0.05,
            e0_norm: 1.0,
            e1_norm: 0.9,
            delta_e_norm: 0.25,
            decreased: true,
            failure_class: FailureClass::None,
            residual_rel: 0.0,
        }
    }

    #[test]
    fn empty_records_give_header_only() {
        let csv = records_csv(&[]);
        assert_eq!(csv, format!("{RECORDS_HEADER}\n"));
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -3.75e-200, 1.0 / 3.0, 6.02e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn manifest_digests_match_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EnsembleConfig::default();
        let files = [
            ("records.csv", records_csv(&[record(0), record(1)])),
            ("summary.json", "{}\n".to_string()),
        ];
        emit_outputs(&cfg, dir.path(), &files).unwrap();

        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        for (name, _) in &files {
            let bytes = std::fs::read(dir.path().join(name)).unwrap();
            let want = sha256_hex(&bytes);
            assert_eq!(manifest["digests"][name].as_str().unwrap(), want);
        }
        assert_eq!(manifest["master_seed"].as_u64().unwrap(), cfg.seed);
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let a = records_csv(&[record(0)]);
        let b = records_csv(&[record(0)]);
        assert_eq!(a, b);
        let svg_a = scatter_svg(&[(0.1, 0.2), (0.5, 0.9)], "x", "y");
        let svg_b = scatter_svg(&[(0.1, 0.2), (0.5, 0.9)], "x", "y");
        assert_eq!(svg_a, svg_b);
    }
}
