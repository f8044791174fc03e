use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::Vector;

/// Settings for the adaptive composite Gauss-Legendre integrator used on
/// smooth-activation path integrals. `tol` is absolute, per coordinate of the
/// integrated vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes_per_panel: usize,
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes_per_panel: 8,
            tol: 1e-10,
            max_refinements: 20,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 1 {
            return Err(CoreError::InvalidInput(
                "nodes_per_panel must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(CoreError::InvalidInput(
                "quadrature tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Gauss-Legendre rule mapped to (0, 1): n nodes in the open interval,
/// positive weights summing to 1, exact for polynomials of degree <= 2n-1.
pub fn gauss_legendre_unit(n: usize) -> (Vector, Vector) {
    assert!(n >= 1, "gauss_legendre_unit requires n >= 1");
    // Newton iteration on P_n over [-1, 1] with the usual Chebyshev-like
    // initial guesses, then affine map to (0, 1).
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        // weight on [-1,1]: 2 / ((1-x^2) P_n'(x)^2); halve for the unit interval
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (Vector::new(nodes), Vector::new(weights))
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed composite rule: `panels` equal panels over (0, 1), `nodes` points
/// each.
fn composite_integral(f: &impl Fn(f64) -> Vector, panels: usize, nodes: usize) -> Vector {
    let (xs, ws) = gauss_legendre_unit(nodes);
    let h = 1.0 / panels as f64;
    let mut acc: Option<Vector> = None;
    for p in 0..panels {
        let left = p as f64 * h;
        for k in 0..nodes {
            let s = left + h * xs[k];
            let val = f(s);
            let w = h * ws[k];
            acc = Some(match acc {
                None => val.scale(w),
                Some(a) => a.add_scaled(w, &val),
            });
        }
    }
    acc.expect("at least one panel")
}

/// Adaptive integral of a smooth vector-valued function over (0, 1): panel
/// count doubles until two successive composite results agree to `cfg.tol`
/// per coordinate. Returns the value and the last successive difference as
/// the error estimate.
pub fn integrate_unit_interval(
    f: impl Fn(f64) -> Vector,
    cfg: &QuadratureConfig,
) -> Result<(Vector, f64)> {
    cfg.validate()?;
    let mut panels = 1;
    let mut prev = composite_integral(&f, panels, cfg.nodes_per_panel);
    for _ in 0..cfg.max_refinements {
        panels *= 2;
        let cur = composite_integral(&f, panels, cfg.nodes_per_panel);
        let diff = (&cur - &prev).norm_inf();
        if diff < cfg.tol {
            return Ok((cur, diff));
        }
        prev = cur;
    }
    let diff = {
        let cur = composite_integral(&f, panels * 2, cfg.nodes_per_panel);
        (&cur - &prev).norm_inf()
    };
    Err(CoreError::QuadratureNotConverged {
        best: prev,
        estimated_error: diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_rule_is_midpoint() {
        let (x, w) = gauss_legendre_unit(1);
        assert!((x[0] - 0.5).abs() <= 1e-15);
        assert!((w[0] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn two_point_rule_analytic() {
        let (x, w) = gauss_legendre_unit(2);
        let off = 1.0 / (2.0 * 3.0f64.sqrt());
        assert!((x[0] - (0.5 - off)).abs() <= 1e-15);
        assert!((x[1] - (0.5 + off)).abs() <= 1e-15);
        assert!((w[0] - 0.5).abs() <= 1e-15);
        assert!((w[1] - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn cubic_exact_with_two_points() {
        let (x, w) = gauss_legendre_unit(2);
        let got: f64 = (0..2).map(|k| w[k] * x[k].powi(3)).sum();
        assert!((got - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn polynomial_exactness_up_to_degree() {
        for n in 1..=16 {
            let (x, w) = gauss_legendre_unit(n);
            let wsum: f64 = w.iter().sum();
            assert!((wsum - 1.0).abs() <= 1e-14, "weights sum for n={n}");
            assert!(x.iter().all(|&xi| xi > 0.0 && xi < 1.0));
            assert!(w.iter().all(|&wi| wi > 0.0));
            for k in 0..=(2 * n - 1) {
                let got: f64 = (0..n).map(|i| w[i] * x[i].powi(k as i32)).sum();
                let want = 1.0 / (k as f64 + 1.0);
                assert!(
                    (got - want).abs() <= 1e-13,
                    "n={n} k={k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn adaptive_integrates_smooth_vector() {
        let cfg = QuadratureConfig::default();
        let f = |s: f64| Vector::new(vec![(3.0 * s).sin(), (2.0 * s).exp()]);
        let (got, err) = integrate_unit_interval(f, &cfg).unwrap();
        let want0 = (1.0 - 3.0f64.cos()) / 3.0;
        let want1 = (2.0f64.exp() - 1.0) / 2.0;
        assert!((got[0] - want0).abs() <= 1e-12);
        assert!((got[1] - want1).abs() <= 1e-12);
        assert!(err < cfg.tol);
    }

    #[test]
    fn refinement_cap_reported() {
        let cfg = QuadratureConfig {
            nodes_per_panel: 1,
            tol: 1e-16,
            max_refinements: 2,
        };
        // discontinuous integrand defeats a 2-refinement budget at 1e-16
        let f = |s: f64| Vector::new(vec![if s < 0.37 { 0.0 } else { 1.0 }]);
        match integrate_unit_interval(f, &cfg) {
            Err(CoreError::QuadratureNotConverged { estimated_error, .. }) => {
                assert!(estimated_error > 0.0);
            }
            other => panic!("expected QuadratureNotConverged, got {other:?}"),
        }
    }
}
