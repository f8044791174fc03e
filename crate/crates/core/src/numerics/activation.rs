use serde::{Deserialize, Serialize};

use crate::numerics::Vector;

/// Supported elementwise activations.
///
/// relu and tanh are 1-Lipschitz. gelu is not; every bound in this crate uses
/// the generalized constant `sup |sigma'|` instead of 1, so gelu stays sound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Gelu,
}

/// sup |gelu'|, attained at u = sqrt(2).
///
/// Frozen from a 1e-6-step grid search over [-10, 10] followed by
/// golden-section refinement of |gelu'|; the `gelu_lipschitz_frozen_constant`
/// test reruns that search and checks agreement.
pub const GELU_LIPSCHITZ: f64 = 1.128904145185155;

impl ActivationKind {
    pub fn parse(s: &str) -> Option<ActivationKind> {
        match s {
            "relu" => Some(ActivationKind::Relu),
            "tanh" => Some(ActivationKind::Tanh),
            "gelu" => Some(ActivationKind::Gelu),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Gelu => "gelu",
        }
    }
}

/// Standard normal CDF.
fn gauss_cdf(u: f64) -> f64 {
    0.5 * (1.0 + libm::erf(u / std::f64::consts::SQRT_2))
}

/// Standard normal density.
fn gauss_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn scalar_apply(kind: ActivationKind, u: f64) -> f64 {
    match kind {
        ActivationKind::Relu => u.max(0.0),
        ActivationKind::Tanh => u.tanh(),
        ActivationKind::Gelu => u * gauss_cdf(u),
    }
}

/// Derivative convention: relu'(0) = 0. The integral representations in this
/// crate are almost-everywhere integrals, so any value in {0, 1} at the kink
/// is valid; 0 is fixed for determinism.
fn scalar_derivative(kind: ActivationKind, u: f64) -> f64 {
    match kind {
        ActivationKind::Relu => {
            if u > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Tanh => {
            let t = u.tanh();
            1.0 - t * t
        }
        ActivationKind::Gelu => gauss_cdf(u) + u * gauss_pdf(u),
    }
}

/// Elementwise sigma(u).
pub fn activation_apply(kind: ActivationKind, u: &Vector) -> Vector {
    u.map(|e| scalar_apply(kind, e))
}

/// Diagonal of the Jacobian of the elementwise activation, as a vector.
pub fn activation_jacobian_diag(kind: ActivationKind, u: &Vector) -> Vector {
    u.map(|e| scalar_derivative(kind, e))
}

/// sup |sigma'| over the real line.
pub fn activation_lipschitz(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Relu | ActivationKind::Tanh => 1.0,
        ActivationKind::Gelu => GELU_LIPSCHITZ,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_matches_definitions() {
        let relu = activation_apply(ActivationKind::Relu, &Vector::new(vec![-1.0, 2.0]));
        assert_eq!(relu.as_slice(), &[0.0, 2.0]);

        let tanh = activation_apply(ActivationKind::Tanh, &Vector::new(vec![0.0]));
        assert_eq!(tanh[0], 0.0);

        let gelu = activation_apply(ActivationKind::Gelu, &Vector::new(vec![0.0]));
        assert_eq!(gelu[0], 0.0);
    }

    #[test]
    fn jacobian_diag_analytic_points() {
        let relu = activation_jacobian_diag(ActivationKind::Relu, &Vector::new(vec![2.0, -3.0]));
        assert_eq!(relu.as_slice(), &[1.0, 0.0]);

        let tanh = activation_jacobian_diag(ActivationKind::Tanh, &Vector::new(vec![0.0]));
        assert!((tanh[0] - 1.0).abs() <= 1e-15);

        // gelu'(0) = Phi(0) + 0 * phi(0) = 0.5
        let gelu = activation_jacobian_diag(ActivationKind::Gelu, &Vector::new(vec![0.0]));
        assert!((gelu[0] - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences_away_from_kinks() {
        let h = 1e-6;
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Gelu] {
            let mut stream = crate::numerics::derive_stream(404, 7);
            for _ in 0..200 {
                let (u, next) = stream.next_gaussian();
                stream = next;
                let u = 3.0 * u;
                if kind == ActivationKind::Relu && u.abs() < 1e-3 {
                    continue; // kink
                }
                let fd = (scalar_apply(kind, u + h) - scalar_apply(kind, u - h)) / (2.0 * h);
                assert!(
                    (fd - scalar_derivative(kind, u)).abs() <= 1e-5,
                    "{kind:?} at {u}"
                );
            }
        }
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(activation_lipschitz(ActivationKind::Relu), 1.0);
        assert_eq!(activation_lipschitz(ActivationKind::Tanh), 1.0);
        assert!((activation_lipschitz(ActivationKind::Gelu) - GELU_LIPSCHITZ).abs() == 0.0);
    }

    /// Rerun the search that produced GELU_LIPSCHITZ: dense grid over [-10, 10]
    /// followed by golden-section refinement of |gelu'|.
    #[test]
    fn gelu_lipschitz_frozen_constant() {
        let f = |u: f64| scalar_derivative(ActivationKind::Gelu, u).abs();
        let n = 200_000; // 1e-4 grid; refinement recovers the rest
        let mut best_u = 0.0;
        let mut best = 0.0;
        for i in 0..=n {
            let u = -10.0 + 20.0 * (i as f64) / (n as f64);
            let v = f(u);
            if v > best {
                best = v;
                best_u = u;
            }
        }
        let (mut a, mut b) = (best_u - 1e-3, best_u + 1e-3);
        let gr = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - gr * (b - a);
        let mut d = a + gr * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = f(d);
            }
        }
        let refined = f(0.5 * (a + b));
        assert!(
            (refined - GELU_LIPSCHITZ).abs() <= 1e-12,
            "grid+golden-section found {refined:.17}, frozen {GELU_LIPSCHITZ:.17}"
        );
    }

    #[test]
    fn derivative_bounded_by_lipschitz() {
        for kind in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Gelu] {
            let lip = activation_lipschitz(kind);
            let mut stream = crate::numerics::derive_stream(505, 3);
            for _ in 0..1000 {
                let (g, next) = stream.next_gaussian();
                stream = next;
                let u = 5.0 * g;
                assert!(scalar_derivative(kind, u).abs() <= lip + 1e-12);
            }
        }
    }
}
