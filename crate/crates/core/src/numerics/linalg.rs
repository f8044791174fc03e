use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{CoreError, Result};

/// Dense real vector. All analysis quantities (tokens, errors, corrections)
/// live here; entries are expected to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Self {
        debug_assert!(entries.iter().all(|e| e.is_finite()), "non-finite entry");
        Vector(entries)
    }

    pub fn zeros(d: usize) -> Self {
        Vector(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest absolute entry (0 for the empty vector).
    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|e| c * e).collect())
    }

    /// self + c * other
    pub fn add_scaled(&self, c: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&e| f(e)).collect())
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|e| e.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        self.add_scaled(1.0, rhs)
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        self.add_scaled(-1.0, rhs)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<T: IntoIterator<Item = f64>>(it: T) -> Self {
        Vector(it.into_iter().collect())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::InvalidInput(format!(
                "matrix dimensions must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(CoreError::InvalidInput(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|e| e.is_finite()) {
            return Err(CoreError::InvalidInput(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Mᵀ v without materializing the transpose.
    pub fn matvec_transposed(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Vector::new(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|e| c * e).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|e| e.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul<&Vector> for &Matrix {
    type Output = Vector;
    fn mul(self, v: &Vector) -> Vector {
        self.matvec(v)
    }
}

/// Neumaier compensated sum; keeps softmax normalizers accurate to ~1 ulp.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Row softmax with max-subtraction. Output entries are positive and sum to 1
/// within ~1 ulp per entry.
pub fn softmax_row(scores: &Vector) -> Result<Vector> {
    if scores.is_empty() {
        return Err(CoreError::InvalidInput("softmax of empty score vector".into()));
    }
    if !scores.all_finite() {
        return Err(CoreError::InvalidInput("softmax scores must be finite".into()));
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z = compensated_sum(exps.iter().copied());
    Ok(exps.into_iter().map(|e| e / z).collect())
}

const MAX_DENSE_SVD_DIM: usize = 64;
const POWER_ITERATION_CAP: usize = 10_000;

/// Largest singular value of `m` (the operator norm induced by the Euclidean
/// norm). Small matrices go through a dense singular value decomposition;
/// anything with min(rows, cols) > 64 uses power iteration on MᵀM with
/// relative convergence threshold `tol`.
pub fn operator_norm(m: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(CoreError::InvalidInput("operator_norm tolerance must be positive".into()));
    }
    if !m.all_finite() {
        return Err(CoreError::InvalidInput("operator_norm of non-finite matrix".into()));
    }
    if m.rows().min(m.cols()) <= MAX_DENSE_SVD_DIM {
        let dm = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
        let svals = dm.singular_values();
        return Ok(svals.iter().fold(0.0f64, |a, &s| a.max(s)));
    }
    power_iteration_norm(m, tol)
}

fn power_iteration_norm(m: &Matrix, tol: f64) -> Result<f64> {
    let n = m.cols();
    let scale = m.data().iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut v = Vector::new(vec![1.0 / (n as f64).sqrt(); n]);
    let mut sigma = 0.0f64;
    for iter in 0..POWER_ITERATION_CAP {
        let mv = m.matvec(&v);
        let w = m.matvec_transposed(&mv);
        let wn = w.norm();
        if wn == 0.0 {
            // v landed in the null space; restart from a basis vector.
            let k = iter % n;
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            v = Vector::new(e);
            continue;
        }
        v = w.scale(1.0 / wn);
        let new_sigma = m.matvec(&v).norm();
        if iter > 0 && (new_sigma - sigma).abs() <= tol * new_sigma.max(f64::MIN_POSITIVE) {
            return Ok(new_sigma);
        }
        sigma = new_sigma;
    }
    Err(CoreError::NumericalFailure(format!(
        "power iteration did not converge within {POWER_ITERATION_CAP} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let out = softmax_row(&Vector::new(vec![0.0, 0.0])).unwrap();
        assert!((out[0] - 0.5).abs() <= 1e-15);
        assert!((out[1] - 0.5).abs() <= 1e-15);

        let out = softmax_row(&Vector::new(vec![1.0, 1.0, 1.0])).unwrap();
        for i in 0..3 {
            assert!((out[i] - 1.0 / 3.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_analytic() {
        let out = softmax_row(&Vector::new(vec![2.0f64.ln(), 0.0])).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() <= 1e-15);
        assert!((out[1] - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn softmax_empty_rejected() {
        assert!(matches!(
            softmax_row(&Vector::new(vec![])),
            Err(CoreError::InvalidInput(_))
        ));
    }

    #[test]
    fn operator_norm_identity() {
        let m = Matrix::identity(3);
        assert!((operator_norm(&m, 1e-10).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn operator_norm_diagonal() {
        let m = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, -4.0]).unwrap();
        assert!((operator_norm(&m, 1e-10).unwrap() - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn operator_norm_matches_jacobi_oracle() {
        let stream = crate::numerics::derive_stream(7070, 1);
        let (m, stream) = crate::numerics::sample_gaussian_matrix(stream, 5, 5, 1.0).unwrap();
        let got = operator_norm(&m, 1e-10).unwrap();
        let want = crate::oracles::jacobi_largest_singular_value(&m);
        assert!(
            (got - want).abs() <= 1e-8 * want,
            "svd route {got} vs jacobi oracle {want}"
        );

        // Power-iteration route (min dim above the dense cutoff).
        let (big, _) = crate::numerics::sample_gaussian_matrix(stream, 70, 66, 0.3).unwrap();
        let got = operator_norm(&big, 1e-12).unwrap();
        let want = crate::oracles::jacobi_largest_singular_value(&big);
        assert!(
            (got - want).abs() <= 1e-7 * want,
            "power route {got} vs jacobi oracle {want}"
        );
    }

    #[test]
    fn operator_norm_dominates_random_directions() {
        let s = crate::numerics::derive_stream(11, 2);
        let (m, s) = crate::numerics::sample_gaussian_matrix(s, 8, 8, 1.0).unwrap();
        let norm = operator_norm(&m, 1e-10).unwrap();
        let mut stream = s;
        for _ in 0..100 {
            let (u, next) = crate::numerics::sample_gaussian_vector(stream, 8, 1.0).unwrap();
            stream = next;
            let un = u.norm();
            if un == 0.0 {
                continue;
            }
            assert!(m.matvec(&u).norm() / un <= norm + 1e-12);
        }
    }
}
