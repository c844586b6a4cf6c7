//! Dense symmetric linear algebra.
//!
//! Everything in this crate that needs a spectrum, a factorization or a PSD
//! test goes through here. Matrices are small (a few dozen rows at most), so
//! the kernels favour robustness: the eigensolver is Householder
//! tridiagonalization followed by implicit QR with Wilkinson shifts, and PSD
//! tests report the minimum eigenvalue rather than relying on a Cholesky
//! attempt.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used by PSD tests when the caller has no better information.
pub const DEFAULT_PSD_TOL: f64 = 1e-9;

/// Largest off-block deviation tolerated by [`kron_reduce`].
pub const KRON_TOL: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("eigenvalue iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not of the form R ⊗ I_{d}: {reason}")]
    Structure { d: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Dense real symmetric matrix.
///
/// The upper triangle is authoritative: constructors that receive a full
/// matrix copy the upper triangle into the lower one, so `get(i, j) ==
/// get(j, i)` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        Self { data: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        Self { data: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[(i, i)] = v;
        }
        m
    }

    /// Builds from a function evaluated on the upper triangle (`i <= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[(i, j)] = v;
                m.data[(j, i)] = v;
            }
        }
        m
    }

    /// Builds from the row-major upper triangle, `dim * (dim + 1) / 2` values.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self, LinalgError> {
        if upper.len() != dim * (dim + 1) / 2 {
            return Err(LinalgError::Dimension(format!(
                "upper triangle of a {dim}x{dim} matrix needs {} entries, got {}",
                dim * (dim + 1) / 2,
                upper.len()
            )));
        }
        let mut it = upper.iter().copied();
        Ok(Self::from_fn(dim, |_, _| it.next().unwrap()))
    }

    /// Builds from a dense row-major square array, reading the upper triangle.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(LinalgError::Dimension("rows do not form a non-empty square array".into()));
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    /// Wraps a square matrix, symmetrizing from its upper triangle.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(LinalgError::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::from_fn(m.nrows(), |i, j| m[(i, j)]))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
        self.data[(j, i)] = v;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.data[(i, j)]);
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.data[(i, j)]).collect()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { data: &self.data * a }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        Self { data: &self.data + &other.data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        Self { data: &self.data - &other.data }
    }

    /// `self ⊗ I_d`.
    pub fn kron_identity(&self, d: usize) -> Self {
        let n = self.dim();
        let mut out = Self::zeros(n * d);
        for i in 0..n {
            for j in 0..n {
                let v = self.data[(i, j)];
                for k in 0..d {
                    out.data[(i * d + k, j * d + k)] = v;
                }
            }
        }
        out
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim());
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.data * &v))
    }

    /// Congruence `Tᵀ M T` for a rectangular `T`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Self {
        let out = t.transpose() * &self.data * t;
        Self::from_fn(out.nrows(), |i, j| 0.5 * (out[(i, j)] + out[(j, i)]))
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            dim: usize,
            upper: Vec<f64>,
        }
        Repr { dim: self.dim(), upper: self.upper_triangle() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            dim: usize,
            upper: Vec<f64>,
        }
        let r = Repr::deserialize(d)?;
        if r.dim == 0 {
            return Err(serde::de::Error::custom("SymMatrix dimension must be at least 1"));
        }
        SymMatrix::from_upper(r.dim, &r.upper).map_err(serde::de::Error::custom)
    }
}

/// All eigenvalues, ascending.
pub fn eigenvalues(m: &SymMatrix) -> Result<Vec<f64>, LinalgError> {
    Ok(eigen_decomposition(m)?.0)
}

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as
/// columns.
pub fn eigen_decomposition(m: &SymMatrix) -> Result<(Vec<f64>, DMatrix<f64>), LinalgError> {
    let eig = m
        .data
        .clone()
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(LinalgError::NoConvergence(EIGEN_MAX_ITER))?;
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?[0])
}

pub fn max_eigenvalue(m: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(*eigenvalues(m)?.last().unwrap())
}

/// True iff the minimum eigenvalue is at least `-tol`.
///
/// A failed eigen-iteration counts as "not PSD".
pub fn is_psd(m: &SymMatrix, tol: f64) -> bool {
    debug_assert!(tol >= 0.0);
    matches!(min_eigenvalue(m), Ok(v) if v >= -tol)
}

/// Recovers `R` from `R ⊗ I_d`.
pub fn kron_reduce(full: &SymMatrix, d: usize) -> Result<SymMatrix, LinalgError> {
    let structure = |reason: String| LinalgError::Structure { d, reason };
    if d == 0 || !full.dim().is_multiple_of(d) {
        return Err(structure(format!("dimension {} is not a multiple of {d}", full.dim())));
    }
    let n = full.dim() / d;
    let reduced = SymMatrix::from_fn(n, |i, j| full.get(i * d, j * d));
    for i in 0..n {
        for j in 0..n {
            let r = reduced.get(i, j);
            for a in 0..d {
                for b in 0..d {
                    let want = if a == b { r } else { 0.0 };
                    let got = full.get(i * d + a, j * d + b);
                    if (got - want).abs() > KRON_TOL {
                        return Err(structure(format!(
                            "entry ({}, {}) is {got}, expected {want}",
                            i * d + a,
                            j * d + b
                        )));
                    }
                }
            }
        }
    }
    Ok(reduced)
}

/// Kronecker product of two dense matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        SymMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    // Determinant by Laplace expansion along the first row; independent of
    // any factorization used by the eigensolver.
    fn det_laplace(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        let mut total = 0.0;
        for col in 0..n {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(c, _)| c != col).map(|(_, &v)| v).collect())
                .collect();
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * m[0][col] * det_laplace(&minor);
        }
        total
    }

    fn char_poly_at(m: &SymMatrix, x: f64) -> f64 {
        let mut rows = m.to_rows();
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] -= x;
        }
        det_laplace(&rows)
    }

    // Roots of det(M - xI) by sign-change scanning plus bisection over the
    // Gershgorin interval.
    fn char_poly_roots(m: &SymMatrix) -> Vec<f64> {
        let n = m.dim();
        let radius = (0..n).map(|i| (0..n).map(|j| m.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
        let steps = 200_000;
        let mut roots = Vec::new();
        let mut prev_x = -radius;
        let mut prev_v = char_poly_at(m, prev_x);
        for k in 1..=steps {
            let x = -radius + 2.0 * radius * k as f64 / steps as f64;
            let v = char_poly_at(m, x);
            if prev_v == 0.0 {
                roots.push(prev_x);
            } else if prev_v.signum() != v.signum() {
                let (mut lo, mut hi) = (prev_x, x);
                let mut flo = prev_v;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let fm = char_poly_at(m, mid);
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_v = v;
        }
        roots
    }

    #[test]
    fn identity_spectrum() {
        assert_eq!(eigenvalues(&SymMatrix::identity(3)).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_spectrum_sorted() {
        let m = SymMatrix::from_diagonal(&[5.0, -2.0, 0.0]);
        assert_eq!(eigenvalues(&m).unwrap(), vec![-2.0, 0.0, 5.0]);
    }

    #[test]
    fn random_matches_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_sym(&mut rng, 5);
        let oracle = char_poly_roots(&m);
        let ours = eigenvalues(&m).unwrap();
        assert_eq!(oracle.len(), 5, "oracle found {oracle:?}");
        for (a, b) in oracle.iter().zip(&ours) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn reconstruction_error_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..8 {
            let m = random_sym(&mut rng, n);
            let (vals, q) = eigen_decomposition(&m).unwrap();
            let lambda = DMatrix::from_diagonal(&DVector::from_vec(vals));
            let err = (&q * lambda * q.transpose() - m.as_dmatrix()).norm();
            assert!(err <= 1e-10 * m.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&SymMatrix::identity(4), 0.0));
        let swap = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!is_psd(&swap, 1e-9));
        let ones = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(is_psd(&ones, 1e-9));
    }

    #[test]
    fn kron_reduce_examples() {
        let r = kron_reduce(&SymMatrix::identity(2).kron_identity(3), 3).unwrap();
        assert_eq!(r, SymMatrix::identity(2));

        let base = SymMatrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(kron_reduce(&base.kron_identity(4), 4).unwrap(), base);

        let mut bad = base.kron_identity(3);
        bad.set(1, 2, 1e-6);
        assert!(matches!(kron_reduce(&bad, 3), Err(LinalgError::Structure { .. })));
        assert!(matches!(kron_reduce(&base, 3), Err(LinalgError::Structure { .. })));
    }

    #[test]
    fn upper_triangle_is_authoritative() {
        let m = SymMatrix::from_dmatrix(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 99.0, 3.0])).unwrap();
        assert_eq!(m.get(1, 0), 2.0);
        let back = SymMatrix::from_upper(2, &m.upper_triangle()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn eigenvalues_sum_to_trace(seed in 0u64..10_000, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_sym(&mut rng, n);
            let s: f64 = eigenvalues(&m).unwrap().iter().sum();
            prop_assert!((s - m.trace()).abs() <= 1e-9 * m.trace().abs().max(1.0));
        }

        #[test]
        fn kron_reduce_inverts_expansion(seed in 0u64..10_000, n in 1usize..5, d in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_sym(&mut rng, n);
            prop_assert_eq!(kron_reduce(&r.kron_identity(d), d).unwrap(), r);
        }

        #[test]
        fn psd_implies_nonnegative_diagonal(seed in 0u64..10_000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut m = SymMatrix::from_dmatrix(&(&a * a.transpose())).unwrap();
            if seed % 3 == 0 {
                m = m.sub(&SymMatrix::identity(n).scale(0.1));
            }
            if is_psd(&m, 0.0) {
                for i in 0..n {
                    prop_assert!(m.get(i, i) >= 0.0);
                }
            }
        }
    }
}
