use serde::{Deserialize, Serialize};

use super::{PolyError, Polynomial};
use crate::linalg::SymMatrix;
use crate::mat::{Mat, Scalar};

/// Largest matrix for which minors are expanded.
pub const MAX_MINOR_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinorSelection {
    /// Every principal minor; nonnegativity of all of them characterizes PSD.
    All,
    /// Leading minors only; this characterizes positive definiteness, so
    /// callers usually pair it with [`PolyMatrix::shift`].
    Leading,
}

/// Symmetric matrix with polynomial entries. Only the upper triangle is
/// stored, so symmetry holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyMatrix {
    dim: usize,
    upper: Vec<Polynomial>,
}

fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

impl PolyMatrix {
    pub fn zeros(dim: usize) -> Self {
        PolyMatrix { dim, upper: vec![Polynomial::zero(); dim * (dim + 1) / 2] }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Polynomial) -> Self {
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                upper.push(f(i, j));
            }
        }
        PolyMatrix { dim, upper }
    }

    pub fn constant(m: &SymMatrix) -> Self {
        Self::from_fn(m.dim(), |i, j| Polynomial::constant(m.get(i, j)))
    }

    /// Takes the upper triangle of a square generic matrix. Asymmetry beyond
    /// `tol` in any coefficient is reported.
    pub fn from_mat(m: &Mat<Polynomial>, tol: f64) -> Result<Self, PolyError> {
        if m.rows() != m.cols() {
            return Err(PolyError::Dimension(format!("{}x{} is not square", m.rows(), m.cols())));
        }
        for i in 0..m.rows() {
            for j in i + 1..m.cols() {
                if !m.get(i, j).approx_eq(m.get(j, i), tol) {
                    return Err(PolyError::Dimension(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self::from_fn(m.rows(), |i, j| m.get(i, j).clone()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.upper[upper_index(self.dim, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        let k = upper_index(self.dim, i, j);
        self.upper[k] = p;
    }

    pub fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> Self {
        PolyMatrix { dim: self.dim, upper: self.upper.iter().map(f).collect() }
    }

    pub fn neg(&self) -> Self {
        self.map(|p| p.scale(-1.0))
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!(self.dim, o.dim);
        PolyMatrix { dim: self.dim, upper: self.upper.iter().zip(&o.upper).map(|(a, b)| a.add_poly(b)).collect() }
    }

    /// `self + eps·I`.
    pub fn shift(&self, eps: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            let d = out.get(i, i).add_poly(&Polynomial::constant(eps));
            out.set(i, i, d);
        }
        out
    }

    pub fn substitute(&self, var: &str, value: &Polynomial) -> Self {
        self.map(|p| p.substitute(var, value))
    }

    pub fn degree(&self) -> u32 {
        self.upper.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Union of the variable lists of all entries, in first-seen order.
    pub fn vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.upper {
            out = Polynomial::union_vars(&out, p.vars());
        }
        out
    }

    pub fn evaluate(&self, point: &[(&str, f64)]) -> Result<SymMatrix, PolyError> {
        let mut m = SymMatrix::zeros(self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                m.set(i, j, self.get(i, j).evaluate(point.iter().copied())?);
            }
        }
        Ok(m)
    }

    pub fn to_mat(&self) -> Mat<Polynomial> {
        Mat::from_fn(self.dim, self.dim, |i, j| self.get(i, j).clone())
    }

    pub fn trace(&self) -> Polynomial {
        (0..self.dim).fold(Polynomial::zero(), |acc, i| acc.add_poly(self.get(i, i)))
    }

    /// Determinant of the principal submatrix on `idx`, by cofactor expansion
    /// along the first row.
    pub fn sub_determinant(&self, idx: &[usize]) -> Polynomial {
        determinant(&Mat::from_fn(idx.len(), idx.len(), |a, b| self.get(idx[a], idx[b]).clone()))
    }

    pub fn principal_minors(&self, which: MinorSelection) -> Result<Vec<Polynomial>, PolyError> {
        if self.dim > MAX_MINOR_DIM {
            return Err(PolyError::Size(self.dim, MAX_MINOR_DIM));
        }
        Ok(principal_index_sets(self.dim, which).iter().map(|idx| self.sub_determinant(idx)).collect())
    }

    /// `(trace, determinant)` of a 2×2 matrix.
    pub fn trace_det(&self) -> Result<(Polynomial, Polynomial), PolyError> {
        if self.dim != 2 {
            return Err(PolyError::Size(self.dim, 2));
        }
        Ok((self.trace(), self.sub_determinant(&[0, 1])))
    }
}

/// Index sets of the principal minors, ordered by size then lexicographically.
pub fn principal_index_sets(dim: usize, which: MinorSelection) -> Vec<Vec<usize>> {
    match which {
        MinorSelection::Leading => (1..=dim).map(|k| (0..k).collect()).collect(),
        MinorSelection::All => {
            let mut sets: Vec<Vec<usize>> =
                (1u32..(1 << dim)).map(|mask| (0..dim).filter(|&i| mask & (1 << i) != 0).collect()).collect();
            sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            sets
        }
    }
}

/// Cofactor-expansion determinant over any scalar ring.
pub fn determinant<R: Scalar>(m: &Mat<R>) -> R {
    let n = m.rows();
    assert_eq!(n, m.cols());
    match n {
        0 => R::one(),
        1 => m.get(0, 0).clone(),
        2 => m.get(0, 0).mul(m.get(1, 1)).sub(&m.get(0, 1).mul(m.get(1, 0))),
        _ => {
            let mut acc = R::zero();
            for j in 0..n {
                let minor = Mat::from_fn(n - 1, n - 1, |a, b| m.get(a + 1, if b < j { b } else { b + 1 }).clone());
                let term = m.get(0, j).mul(&determinant(&minor));
                acc = if j % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, SymMatrix};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> Polynomial {
        s.parse().unwrap()
    }

    #[test]
    fn two_by_two_minors_and_trace_det() {
        let m = PolyMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => p("a"),
            (0, 1) => p("b"),
            _ => p("c"),
        });
        let minors = m.principal_minors(MinorSelection::All).unwrap();
        assert_eq!(minors, vec![p("a"), p("c"), p("a*c - b^2")]);
        let (t, d) = m.trace_det().unwrap();
        assert_eq!(t, p("a + c"));
        assert_eq!(d, p("a*c - b^2"));
        assert_eq!(m.principal_minors(MinorSelection::Leading).unwrap(), vec![p("a"), p("a*c - b^2")]);
    }

    #[test]
    fn identity_minors_are_one() {
        let m = PolyMatrix::constant(&SymMatrix::identity(3));
        let minors = m.principal_minors(MinorSelection::All).unwrap();
        assert_eq!(minors.len(), 7);
        assert!(minors.iter().all(|q| *q == Polynomial::constant(1.0)));
    }

    #[test]
    fn size_limits() {
        assert!(PolyMatrix::zeros(7).principal_minors(MinorSelection::All).is_err());
        assert!(PolyMatrix::zeros(3).trace_det().is_err());
    }

    #[test]
    fn constant_trace_det_matches_numeric() {
        let s = SymMatrix::from_rows(&[vec![2.0, -1.5], vec![-1.5, 0.25]]).unwrap();
        let (t, d) = PolyMatrix::constant(&s).trace_det().unwrap();
        assert_eq!(t.constant_term(), 2.25);
        assert!((d.constant_term() - (0.5 - 2.25)).abs() < 1e-15);
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        SymMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn minors_commute_with_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // entries are random affine functions of (u, v)
        let coeffs: Vec<[f64; 3]> = (0..6)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mut k = 0;
        let m = PolyMatrix::from_fn(3, |_, _| {
            let c = coeffs[k];
            k += 1;
            p(&format!("{} + {}*u + {}*v", c[0], c[1], c[2]))
        });
        let minors = m.principal_minors(MinorSelection::All).unwrap();
        let sets = principal_index_sets(3, MinorSelection::All);
        for _ in 0..1000 {
            let (u, v) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let num = m.evaluate(&[("u", u), ("v", v)]).unwrap();
            for (q, idx) in minors.iter().zip(&sets) {
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| num.get(idx[a], idx[b]));
                let want = sub.determinant();
                let got = q.evaluate([("u", u), ("v", v)]).unwrap();
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn psd_iff_all_minors_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [0usize; 2];
        for _ in 0..2000 {
            // shift toward the PSD boundary so both outcomes are common
            let mut s = random_sym(&mut rng, 3);
            let shift = -min_eigenvalue(&s).unwrap() + rng.random_range(-0.3..0.3);
            s = s.add(&SymMatrix::identity(3).scale(shift));
            let lam = min_eigenvalue(&s).unwrap();
            if lam.abs() < 1e-6 {
                continue;
            }
            let minors = PolyMatrix::constant(&s).principal_minors(MinorSelection::All).unwrap();
            let by_minors = minors.iter().all(|q| q.constant_term() >= -1e-9);
            assert_eq!(by_minors, lam >= 0.0, "lambda_min {lam}");
            seen[by_minors as usize] += 1;
        }
        assert!(seen[0] > 100 && seen[1] > 100);
    }

    #[test]
    fn leading_minors_miss_semidefinite_counterexample() {
        // diag(0, -1): leading minors {0, 0} but not PSD
        let m = PolyMatrix::constant(&SymMatrix::from_diagonal(&[0.0, -1.0]));
        let lead = m.principal_minors(MinorSelection::Leading).unwrap();
        assert!(lead.iter().all(|q| q.constant_term() >= 0.0));
        let all = m.principal_minors(MinorSelection::All).unwrap();
        assert!(all.iter().any(|q| q.constant_term() < 0.0));
    }
}
