//! Independent reference implementations used only by the test suites to
//! cross-check the main code paths. Nothing here is called by the analysis
//! pipeline itself.

use crate::numerics::Matrix;

/// Largest singular value via one-sided Jacobi rotations.
///
/// Deliberately shares no code with `operator_norm`: columns are orthogonalized
/// by plane rotations until all pairwise inner products vanish, at which point
/// the column norms are the singular values.
pub fn jacobi_largest_singular_value(m: &Matrix) -> f64 {
    // work on the tall orientation so column count is min(rows, cols)
    let a = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = (a.rows(), a.cols());
    let mut col: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[(i, j)]).collect()).collect();

    let eps = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha: f64 = col[p].iter().map(|v| v * v).sum();
                let beta: f64 = col[q].iter().map(|v| v * v).sum();
                let gamma: f64 = col[p].iter().zip(&col[q]).map(|(u, v)| u * v).sum();
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let up = col[p][i];
                    let uq = col[q][i];
                    col[p][i] = c * up - s * uq;
                    col[q][i] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    col.iter()
        .map(|cj| cj.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_diagonal_matrix() {
        let m = Matrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 0.0, -7.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        assert!((jacobi_largest_singular_value(&m) - 7.0).abs() <= 1e-12);
    }

    #[test]
    fn jacobi_on_rank_one() {
        // outer product u v^T has single singular value |u||v|
        let u = [1.0, 2.0, -2.0];
        let v = [3.0, 0.0, 4.0];
        let m = Matrix::from_fn(3, 3, |i, j| u[i] * v[j]);
        assert!((jacobi_largest_singular_value(&m) - 15.0).abs() <= 1e-10);
    }
}
