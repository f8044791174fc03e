use ctxcorr::correction::FailureClass;

use crate::error::{HarnessError, Result};
use crate::experiment::InstanceRecord;

/// Sample Pearson correlation, mean-centered two-pass form.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::DegenerateStatistics(
            "pearson needs two same-length samples of size >= 2".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HarnessError::DegenerateStatistics(
            "pearson of a constant sample".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sort points by x, split into 10 equal-count bins (the remainder spread one
/// extra each over the first bins), and report (median x, median y) per bin.
pub fn decile_trend(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 10 {
        return Err(HarnessError::DegenerateStatistics(format!(
            "decile trend needs at least 10 points, got {}",
            points.len()
        )));
    }
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = sorted.len();
    let base = n / 10;
    let extra = n % 10;
    let mut out = Vec::with_capacity(10);
    let mut start = 0;
    for bin in 0..10 {
        let size = base + usize::from(bin < extra);
        let chunk = &sorted[start..start + size];
        start += size;
        let mut xs: Vec<f64> = chunk.iter().map(|p| p.0).collect();
        let mut ys: Vec<f64> = chunk.iter().map(|p| p.1).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push((median_of_sorted(&xs), median_of_sorted(&ys)));
    }
    Ok(out)
}

/// Failure-class counts plus the ratio/rho distributions restricted to
/// decreased records.
#[derive(Debug, Clone, Default)]
pub struct FailureDistribution {
    pub none: usize,
    pub angle: usize,
    pub norm: usize,
    pub decreased_ratio: Vec<f64>,
    pub decreased_rho: Vec<f64>,
}

impl FailureDistribution {
    pub fn total(&self) -> usize {
        self.none + self.angle + self.norm
    }
}

pub fn failure_distribution(records: &[InstanceRecord]) -> FailureDistribution {
    let mut out = FailureDistribution::default();
    for r in records {
        match r.failure_class {
            FailureClass::None => out.none += 1,
            FailureClass::Angle => out.angle += 1,
            FailureClass::Norm => out.norm += 1,
        }
        if r.decreased {
            out.decreased_ratio.push(r.ratio);
            out.decreased_rho.push(r.rho);
        }
    }
    out
}
