//! The Lyapunov matrix inequality `M(θ, ρ, λ, P) ⪯ 0` in reduced dimension.
//!
//! ```text
//! M  = M⁰ + s·(ρ²M¹ + (1−ρ²)M²) + λM³
//! M⁰ = [ĀᵀPĀ − ρ²P, ĀᵀPB̄; B̄ᵀPĀ, B̄ᵀPB̄]
//! M¹ = N¹ + N², M² = N¹ + N³, M³ = TᵀQ_f T with T = [C̄ 0; 0 1]
//! ```
//!
//! `s` is 1 in the usual statement; the analysis and design programs use it
//! as a homogenizing variable. `M³` is scaled so that `λ` multiplies `Q_f`
//! directly; this equals `2(m_f+L_f)·N⁴` and only rescales `λ`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{max_eigenvalue, LinalgError, SymMatrix};
use crate::mat::{Mat, Scalar};
use crate::model::{
    lyapunov_values, simulate, AlgorithmFamily, FunctionClass, LogSumExp, ModelError, Objective, Quadratic, StateSpace,
};
use crate::poly::{PolyMatrix, Polynomial};

/// Accepted numerical slack on `−M ⪰ 0`.
pub const MARGIN_TOL: f64 = 1e-8;

/// Steps per empirical trajectory.
pub const VERIFY_STEPS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rho^2 = {0} is outside [0, 1]")]
    Rho(f64),
    #[error("family `{0}` has no symbolic matrices")]
    UnsupportedFamily(String),
}

/// The four Theorem 1 building blocks `N¹..N⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct NMatrices<R> {
    pub n1: Mat<R>,
    pub n2: Mat<R>,
    pub n3: Mat<R>,
    pub n4: Mat<R>,
}

fn c<R: Scalar>(v: f64) -> R {
    R::from_f64(v)
}

/// `[X Y; 0 1]` for a 1×n̄ row `X` and a 1×1 `Y`.
fn lift<R: Scalar>(x: &Mat<R>, y: R) -> Mat<R> {
    let n = x.cols();
    Mat::from_fn(2, n + 1, |i, j| match (i, j) {
        (0, j) if j < n => x.get(0, j).clone(),
        (0, _) => y.clone(),
        (1, j) if j == n => R::one(),
        _ => R::zero(),
    })
}

fn middle<R: Scalar>(a: f64, b: f64, d: f64) -> Mat<R> {
    Mat::from_rows(vec![vec![c(a), c(b)], vec![c(b), c(d)]])
}

pub fn n_matrices<R: Scalar>(ss: &StateSpace<R>, fc: &FunctionClass) -> NMatrices<R> {
    let (m, l) = (fc.m, fc.l);
    let ea = ss.e.matmul(&ss.a);
    let eb = ss.e.matmul(&ss.b).get(0, 0).clone();
    let t1 = lift(&ea.sub(&ss.c), eb);
    let t2 = lift(&ss.c.sub(&ss.e), R::zero());
    let t3 = lift(&ss.c, R::zero());
    let w_strong = middle(-m / 2.0, 0.5, 0.0);
    NMatrices {
        n1: Mat::congruence(&t1, &middle(l / 2.0, 0.5, 0.0)),
        n2: Mat::congruence(&t2, &w_strong),
        n3: Mat::congruence(&t3, &w_strong),
        n4: Mat::congruence(&t3, &middle(-m * l / (m + l), 0.5, -1.0 / (m + l))),
    }
}

/// `M³ = [C̄ 0; 0 1]ᵀ Q_f [C̄ 0; 0 1]`.
pub fn m3<R: Scalar>(ss: &StateSpace<R>, fc: &FunctionClass) -> Mat<R> {
    let q = fc.qf_matrix();
    let qf = Mat::from_fn(2, 2, |i, j| c(q.get(i, j)));
    Mat::congruence(&lift(&ss.c, R::zero()), &qf)
}

/// `M⁰(P)` including the `−ρ²P` block.
pub fn m0<R: Scalar>(ss: &StateSpace<R>, rho2: &R, p: &Mat<R>) -> Mat<R> {
    let n = ss.state_dim();
    let ab = Mat::from_fn(n, n + 1, |i, j| if j < n { ss.a.get(i, j).clone() } else { ss.b.get(i, 0).clone() });
    let mut out = Mat::congruence(&ab, p);
    for i in 0..n {
        for j in 0..n {
            let v = out.get(i, j).sub(&rho2.mul(p.get(i, j)));
            out.set(i, j, v);
        }
    }
    out
}

/// `M⁰ + s·(ρ²M¹ + (1−ρ²)M²) + λM³` over any scalar ring.
pub fn assemble<R: Scalar>(ss: &StateSpace<R>, fc: &FunctionClass, rho2: &R, lam: &R, p: &Mat<R>, s: &R) -> Mat<R> {
    let nm = n_matrices(ss, fc);
    let m1 = nm.n1.add(&nm.n2);
    let m2 = nm.n1.add(&nm.n3);
    let one_minus = R::one().sub(rho2);
    let mix = m1.scale(rho2).add(&m2.scale(&one_minus)).scale(s);
    m0(ss, rho2, p).add(&mix).add(&m3(ss, fc).scale(lam))
}

fn sym_from_mat(m: &Mat<f64>) -> SymMatrix {
    // entries are built symmetrically; averaging only removes rounding noise
    SymMatrix::from_fn(m.rows(), |i, j| 0.5 * (m.get(i, j) + m.get(j, i)))
}

fn sym_to_mat(p: &SymMatrix) -> Mat<f64> {
    Mat::from_fn(p.dim(), p.dim(), |i, j| p.get(i, j))
}

/// `M(θ, ρ, λ, P)` for given state-space matrices.
pub fn lmi_matrix(
    ss: &StateSpace<f64>,
    fc: &FunctionClass,
    rho2: f64,
    lam: f64,
    p: &SymMatrix,
) -> Result<SymMatrix, CertError> {
    if !(0.0..=1.0).contains(&rho2) {
        return Err(CertError::Rho(rho2));
    }
    if p.dim() != ss.state_dim() {
        return Err(CertError::Dimension(format!("P is {0}×{0}, state dimension is {1}", p.dim(), ss.state_dim())));
    }
    Ok(sym_from_mat(&assemble(ss, fc, &rho2, &lam, &sym_to_mat(p), &1.0)))
}

#[derive(Debug, Clone)]
pub struct CertificateProblem {
    pub family: Arc<dyn AlgorithmFamily>,
    pub fc: FunctionClass,
}

impl CertificateProblem {
    pub fn new(family: Arc<dyn AlgorithmFamily>, fc: FunctionClass) -> Self {
        CertificateProblem { family, fc }
    }

    pub fn state_dim(&self) -> usize {
        self.family.state_dim()
    }
}

pub fn build_numeric(
    prob: &CertificateProblem,
    theta: &[f64],
    rho2: f64,
    lam: f64,
    p: &SymMatrix,
) -> Result<SymMatrix, CertError> {
    let ss = prob.family.matrices(theta)?;
    lmi_matrix(&ss, &prob.fc, rho2, lam, p)
}

/// The pieces of `M` that are affine in `(s, λ, P)` at a fixed `(θ, ρ²)`:
/// `M = s·mixed + λ·lambda + Σ P_ij·p_terms[(i,j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub mixed: SymMatrix,
    pub lambda: SymMatrix,
    /// Indexed like the upper triangle of `P`; the term for `(i, j)` with
    /// `i < j` is the coefficient of `P_ij = P_ji`.
    pub p_terms: Vec<((usize, usize), SymMatrix)>,
}

pub fn affine_terms(ss: &StateSpace<f64>, fc: &FunctionClass, rho2: f64) -> Result<AffineLmi, CertError> {
    let n = ss.state_dim();
    let zero = Mat::zeros(n, n);
    let at = |rho: f64, lam: f64, p: &Mat<f64>, s: f64| sym_from_mat(&assemble(ss, fc, &rho, &lam, p, &s));
    if !(0.0..=1.0).contains(&rho2) {
        return Err(CertError::Rho(rho2));
    }
    let mixed = at(rho2, 0.0, &zero, 1.0);
    let lambda = at(rho2, 1.0, &zero, 0.0);
    let mut p_terms = Vec::new();
    for i in 0..n {
        for j in i..n {
            let mut e = Mat::zeros(n, n);
            e.set(i, j, 1.0);
            e.set(j, i, 1.0);
            p_terms.push(((i, j), at(rho2, 0.0, &e, 0.0)));
        }
    }
    Ok(AffineLmi { mixed, lambda, p_terms })
}

/// Inputs to the symbolic assembly; any entry may be a constant or a
/// polynomial in arbitrary indeterminates.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicInputs {
    pub theta: Vec<Polynomial>,
    pub rho2: Polynomial,
    pub lambda: Polynomial,
    pub p: Mat<Polynomial>,
    /// Weight on the `M¹`/`M²` terms; 1 in the plain inequality.
    pub s: Polynomial,
}

/// How `P` enters a symbolic build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PShape {
    /// `P = p·I` with a single indeterminate `p`.
    Scalar,
    /// Free symmetric `P` with indeterminates `p11, p12, ...`.
    Full,
}

pub fn p_var_names(n: usize, shape: PShape) -> Vec<String> {
    match shape {
        PShape::Scalar => vec!["p".into()],
        PShape::Full => {
            let mut out = Vec::new();
            for i in 0..n {
                for j in i..n {
                    out.push(format!("p{}{}", i + 1, j + 1));
                }
            }
            out
        }
    }
}

impl SymbolicInputs {
    /// Every quantity an indeterminate: θ by parameter name, `rho2`,
    /// `lambda`, and `P` per `shape`.
    pub fn indeterminate(prob: &CertificateProblem, shape: PShape) -> Self {
        let n = prob.state_dim();
        let theta = prob.family.param_names().iter().map(|s| Polynomial::var(s)).collect();
        let p = match shape {
            PShape::Scalar => Mat::identity(n).scale(&Polynomial::var("p")),
            PShape::Full => {
                let names = p_var_names(n, PShape::Full);
                let mut k = 0;
                let mut m = Mat::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = Polynomial::var(&names[k]);
                        m.set(i, j, v.clone());
                        m.set(j, i, v);
                        k += 1;
                    }
                }
                m
            }
        };
        SymbolicInputs {
            theta,
            rho2: Polynomial::var("rho2"),
            lambda: Polynomial::var("lambda"),
            p,
            s: Polynomial::constant(1.0),
        }
    }

    /// All quantities fixed: the result is a constant matrix.
    pub fn constant(theta: &[f64], rho2: f64, lam: f64, p: &SymMatrix) -> Self {
        SymbolicInputs {
            theta: theta.iter().map(|&t| Polynomial::constant(t)).collect(),
            rho2: Polynomial::constant(rho2),
            lambda: Polynomial::constant(lam),
            p: Mat::from_fn(p.dim(), p.dim(), |i, j| Polynomial::constant(p.get(i, j))),
            s: Polynomial::constant(1.0),
        }
    }

    pub fn fix_theta(mut self, k: usize, value: f64) -> Self {
        self.theta[k] = Polynomial::constant(value);
        self
    }
}

pub fn build_symbolic(prob: &CertificateProblem, inputs: &SymbolicInputs) -> Result<PolyMatrix, CertError> {
    let sym = prob.family.symbolic().ok_or_else(|| CertError::UnsupportedFamily(prob.family.name().to_string()))?;
    assemble_symbolic(&sym, prob.family.param_names(), &prob.fc, inputs)
}

/// Symbolic assembly from explicit matrices whose entries are polynomials in
/// `names`.
pub fn assemble_symbolic(
    sym: &StateSpace<Polynomial>,
    names: &[String],
    fc: &FunctionClass,
    inputs: &SymbolicInputs,
) -> Result<PolyMatrix, CertError> {
    if inputs.theta.len() != names.len() {
        return Err(CertError::Dimension(format!("{} θ entries for {} parameters", inputs.theta.len(), names.len())));
    }
    let n = sym.state_dim();
    if inputs.p.rows() != n || inputs.p.cols() != n {
        return Err(CertError::Dimension(format!("P must be {n}×{n}")));
    }
    // substitute through temporaries so a θ value may mention parameter names
    let tmp: Vec<String> = (0..names.len()).map(|k| format!("__theta{k}")).collect();
    let ss = sym.map(|e| {
        let mut e = e.clone();
        for (k, name) in names.iter().enumerate() {
            e = e.substitute(name, &Polynomial::var(&tmp[k]));
        }
        for (k, t) in tmp.iter().enumerate() {
            e = e.substitute(t, &inputs.theta[k]);
        }
        e
    });
    let m = assemble(&ss, fc, &inputs.rho2, &inputs.lambda, &inputs.p, &inputs.s);
    Ok(PolyMatrix::from_mat(&m, 1e-12).expect("Theorem 1 matrices are symmetric"))
}

/// A rate certificate: `(ρ, λ, P)` with `M(θ, ρ, λ, P) ⪯ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub rho: f64,
    pub lambda: f64,
    #[serde(rename = "P")]
    pub p: SymMatrix,
    /// `−λ_max(M)`; nonnegative means the inequality holds.
    pub margin: f64,
    pub family: String,
    pub theta: Vec<f64>,
    pub m_f: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
}

impl Certificate {
    pub fn new(
        prob: &CertificateProblem,
        theta: &[f64],
        rho2: f64,
        lambda: f64,
        p: SymMatrix,
    ) -> Result<Self, CertError> {
        let m = build_numeric(prob, theta, rho2, lambda, &p)?;
        let margin = -max_eigenvalue(&m)?;
        Ok(Certificate {
            rho: rho2.sqrt(),
            lambda,
            p,
            margin,
            family: prob.family.name().to_string(),
            theta: theta.to_vec(),
            m_f: prob.fc.m,
            l_f: prob.fc.l,
        })
    }

    pub fn rho2(&self) -> f64 {
        self.rho * self.rho
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    /// `λ_max(M)` at the certificate.
    pub max_eigenvalue: f64,
    pub numeric_ok: bool,
    pub p_psd: bool,
    /// Largest `V_{k+1} − ρ²V_k` beyond tolerance, over all trials (≤ 0 passes).
    pub worst_decrease_violation: f64,
    /// Largest `f(x_k) − f⋆ − ρ^{2k}V₀` beyond tolerance (≤ 0 passes).
    pub worst_rate_violation: f64,
    pub trials: usize,
    pub steps: usize,
    pub empirical_ok: bool,
    pub failure: Option<String>,
}

/// Numeric check of `−M ⪰ −1e-8`, plus `trials` simulated runs alternating
/// random quadratics and regularized log-sum-exp functions in `F(m_f, L_f)`.
pub fn verify_certificate(
    prob: &CertificateProblem,
    theta: &[f64],
    cert: &Certificate,
    trials: usize,
) -> VerificationReport {
    verify_certificate_seeded(prob, theta, cert, trials, 0)
}

pub fn verify_certificate_seeded(
    prob: &CertificateProblem,
    theta: &[f64],
    cert: &Certificate,
    trials: usize,
    seed: u64,
) -> VerificationReport {
    let mut report = VerificationReport {
        passed: false,
        max_eigenvalue: f64::NAN,
        numeric_ok: false,
        p_psd: false,
        worst_decrease_violation: f64::NEG_INFINITY,
        worst_rate_violation: f64::NEG_INFINITY,
        trials,
        steps: VERIFY_STEPS,
        empirical_ok: false,
        failure: None,
    };
    let rho2 = cert.rho2();
    let m = match build_numeric(prob, theta, rho2, cert.lambda, &cert.p) {
        Ok(m) => m,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    report.max_eigenvalue = max_eigenvalue(&m).unwrap_or(f64::NAN);
    report.numeric_ok = report.max_eigenvalue <= MARGIN_TOL;
    report.p_psd = crate::linalg::min_eigenvalue(&cert.p).is_ok_and(|v| v >= -1e-9 * (1.0 + cert.p.max_abs()));
    let lam_ok = cert.lambda >= -1e-12;

    let ss = match prob.family.matrices(theta) {
        Ok(s) => s,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    let v_red = match ss.fixed_point() {
        Ok(v) => v,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    let n = ss.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut empirical_ok = true;
    for trial in 0..trials {
        let d = 1 + trial % 3;
        let f: Box<dyn Objective> = if trial % 2 == 0 {
            Box::new(Quadratic::random(&prob.fc, d, &mut rng))
        } else {
            Box::new(LogSumExp::random(&prob.fc, d, d + 2, &mut rng))
        };
        let xi0: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let traj = match simulate(prob.family.as_ref(), theta, f.as_ref(), &xi0, VERIFY_STEPS) {
            Ok(t) => t,
            Err(e) => {
                empirical_ok = false;
                report.failure = Some(e.to_string());
                break;
            }
        };
        let xs = crate::model::full_fixed_point(&v_red, f.minimizer());
        let v = match lyapunov_values(&traj, &cert.p, &xs) {
            Ok(v) => v,
            Err(e) => {
                empirical_ok = false;
                report.failure = Some(e.to_string());
                break;
            }
        };
        // values below this are at the level of rounding in f(x) − f⋆
        let floor = 1e-12 * f.min_value().abs().max(1.0);
        for k in 0..VERIFY_STEPS {
            let viol = v[k + 1] - rho2 * v[k] - 1e-8 * v[k].abs() - floor;
            report.worst_decrease_violation = report.worst_decrease_violation.max(viol);
            let bound = rho2.powi(k as i32 + 1) * v[0] * (1.0 + 1e-6);
            let rviol = traj.objective_gaps[k + 1] - bound - floor;
            report.worst_rate_violation = report.worst_rate_violation.max(rviol);
        }
    }
    if report.worst_decrease_violation > 0.0 || report.worst_rate_violation > 0.0 {
        empirical_ok = false;
    }
    report.empirical_ok = empirical_ok;
    report.passed = report.numeric_ok && report.p_psd && lam_ok && empirical_ok && report.failure.is_none();
    if !report.passed && report.failure.is_none() {
        report.failure = Some(if !report.numeric_ok {
            format!("M has positive eigenvalue {:e}", report.max_eigenvalue)
        } else if !report.p_psd {
            "P is not positive semidefinite".into()
        } else if !lam_ok {
            format!("lambda = {} is negative", cert.lambda)
        } else {
            format!(
                "empirical decrease violated (decrease {:e}, rate {:e})",
                report.worst_decrease_violation, report.worst_rate_violation
            )
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_family;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn prob(name: &str, m: f64, l: f64) -> CertificateProblem {
        CertificateProblem::new(builtin_family(name).unwrap(), FunctionClass::new(m, l).unwrap())
    }

    /// Dense `TᵀWT` with nalgebra, independent of `Mat`.
    fn dense_congruence(t: &[Vec<f64>], w: &[Vec<f64>]) -> DMatrix<f64> {
        let t = DMatrix::from_fn(t.len(), t[0].len(), |i, j| t[i][j]);
        let w = DMatrix::from_fn(w.len(), w[0].len(), |i, j| w[i][j]);
        t.transpose() * w * t
    }

    #[test]
    fn gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = rng.random_range(0.1..2.0);
            let l = m * rng.random_range(1.0..30.0);
            let pr = prob("gradient", m, l);
            let (h, r2, lam, p) = (
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..3.0),
            );
            let mm = build_numeric(&pr, &[h], r2, lam, &SymMatrix::from_diagonal(&[p])).unwrap();
            let m11 = (p - m / 2.0) * (1.0 - r2) - 2.0 * m * l * lam;
            let m12 = -h * p - r2 / 2.0 + 0.5 + lam * (m + l);
            let m22 = h * h * p + (l * h * h - 2.0 * h) / 2.0 - 2.0 * lam;
            let tol = 1e-12 * (1.0 + m * l);
            assert!((mm.get(0, 0) - m11).abs() < tol);
            assert!((mm.get(0, 1) - m12).abs() < tol);
            assert!((mm.get(1, 1) - m22).abs() < tol);
        }
    }

    #[test]
    fn rho_one_collapses_to_m0_plus_m1() {
        let pr = prob("nesterov", 1.0, 10.0);
        let ss = pr.family.matrices(&[0.1, 0.5]).unwrap();
        let p = SymMatrix::from_rows(&[vec![2.0, -0.5], vec![-0.5, 1.0]]).unwrap();
        let full = build_numeric(&pr, &[0.1, 0.5], 1.0, 0.0, &p).unwrap();
        let nm = n_matrices(&ss, &pr.fc);
        let want = m0(&ss, &1.0, &sym_to_mat(&p)).add(&nm.n1).add(&nm.n2);
        for i in 0..3 {
            for j in 0..3 {
                assert!((full.get(i, j) - want.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nesterov_m3_matches_dense_product() {
        let (m, l, beta) = (1.0, 10.0, 0.5);
        let pr = prob("nesterov", m, l);
        let ss = pr.family.matrices(&[1.0 / l, beta]).unwrap();
        let t = vec![vec![-beta, 1.0 + beta, 0.0], vec![0.0, 0.0, 1.0]];
        let qf = vec![vec![-2.0 * m * l, m + l], vec![m + l, -2.0]];
        let want = dense_congruence(&t, &qf);
        let got = m3(&ss, &pr.fc).to_dmatrix();
        assert!((got - &want).amax() < 1e-12);
        // and the unscaled N⁴ from the theorem differs by 2(m + L)
        let n4 = n_matrices(&ss, &pr.fc).n4.to_dmatrix();
        assert!((n4 * (2.0 * (m + l)) - want).amax() < 1e-12);
    }

    #[test]
    fn n_matrices_match_dense_products() {
        let (m, l) = (0.5, 4.0);
        let pr = prob("general", m, l);
        let (h, b, g) = (0.3, 0.2, 0.7);
        let ss = pr.family.matrices(&[h, b, g]).unwrap();
        // EA − C = [−b, 1 + b] − [−g, 1 + g], EB = −h
        let t1 = vec![vec![g - b, b - g, -h], vec![0.0, 0.0, 1.0]];
        let w1 = vec![vec![l / 2.0, 0.5], vec![0.5, 0.0]];
        let nm = n_matrices(&ss, &pr.fc);
        assert!((nm.n1.to_dmatrix() - dense_congruence(&t1, &w1)).amax() < 1e-14);
        let t2 = vec![vec![-g, g, 0.0], vec![0.0, 0.0, 1.0]];
        let w2 = vec![vec![-m / 2.0, 0.5], vec![0.5, 0.0]];
        assert!((nm.n2.to_dmatrix() - dense_congruence(&t2, &w2)).amax() < 1e-14);
    }

    #[test]
    fn affine_in_lambda_and_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = prob("general", 1.0, 7.0);
        for _ in 0..30 {
            let th: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let r2 = rng.random_range(0.0..1.0);
            let rp = |rng: &mut ChaCha8Rng| SymMatrix::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let (p1, p2) = (rp(&mut rng), rp(&mut rng));
            let (l1, l2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let base = build_numeric(&pr, &th, r2, 0.0, &SymMatrix::zeros(2)).unwrap();
            let d = |l, p: &SymMatrix| build_numeric(&pr, &th, r2, l, p).unwrap().sub(&base);
            let lhs = d(l1 + l2, &p1.add(&p2));
            let rhs = d(l1, &p1).add(&d(l2, &p2));
            assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        }
    }

    #[test]
    fn affine_terms_reassemble() {
        let pr = prob("nesterov", 1.0, 10.0);
        let ss = pr.family.matrices(&[0.1, 0.6]).unwrap();
        let aff = affine_terms(&ss, &pr.fc, 0.7).unwrap();
        let p = SymMatrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.9]]).unwrap();
        let mut sum = aff.mixed.add(&aff.lambda.scale(0.3));
        for ((i, j), t) in &aff.p_terms {
            sum = sum.add(&t.scale(p.get(*i, *j)));
        }
        let direct = lmi_matrix(&ss, &pr.fc, 0.7, 0.3, &p).unwrap();
        assert!(sum.sub(&direct).max_abs() < 1e-12);
    }

    #[test]
    fn built_matrices_are_symmetric() {
        let pr = prob("general", 1.0, 3.0);
        let p = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap();
        let ss = pr.family.matrices(&[0.2, 0.4, 0.9]).unwrap();
        let raw = assemble(&ss, &pr.fc, &0.5, &0.1, &sym_to_mat(&p), &1.0);
        let built = build_numeric(&pr, &[0.2, 0.4, 0.9], 0.5, 0.1, &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                // the raw product is symmetric up to rounding, the stored one exactly
                assert!((raw.get(i, j) - raw.get(j, i)).abs() <= 1e-15 * (1.0 + raw.get(i, j).abs()));
                assert_eq!(built.get(i, j), built.get(j, i));
                assert!((built.get(i, j) - raw.get(i, j)).abs() <= 1e-15 * (1.0 + raw.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn symbolic_gradient_m22() {
        let pr = prob("gradient", 1.0, 10.0);
        let m = build_symbolic(&pr, &SymbolicInputs::indeterminate(&pr, PShape::Scalar)).unwrap();
        let m22 = m.get(1, 1);
        assert_eq!(m22.num_terms(), 4);
        assert_eq!(m22.coefficient(&[("h", 2), ("p", 1)]), 1.0);
        assert_eq!(m22.coefficient(&[("h", 2)]), 5.0);
        assert_eq!(m22.coefficient(&[("h", 1)]), -1.0);
        assert_eq!(m22.coefficient(&[("lambda", 1)]), -2.0);
    }

    #[test]
    fn symbolic_matches_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (name, shape) in [
            ("gradient", PShape::Scalar),
            ("gradient", PShape::Full),
            ("nesterov", PShape::Full),
            ("general", PShape::Full),
        ] {
            let pr = prob(name, 0.7, 9.0);
            let sym = build_symbolic(&pr, &SymbolicInputs::indeterminate(&pr, shape)).unwrap();
            for _ in 0..100 {
                let theta: Vec<f64> = pr.family.param_names().iter().map(|_| rng.random_range(0.0..1.0)).collect();
                let (r2, lam) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let n = pr.state_dim();
                let pvals: Vec<f64> = p_var_names(n, shape).iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let p = match shape {
                    PShape::Scalar => SymMatrix::identity(n).scale(pvals[0]),
                    PShape::Full => SymMatrix::from_upper(n, &pvals).unwrap(),
                };
                let mut point: Vec<(String, f64)> =
                    pr.family.param_names().iter().cloned().zip(theta.iter().copied()).collect();
                point.push(("rho2".into(), r2));
                point.push(("lambda".into(), lam));
                point.extend(p_var_names(n, shape).into_iter().zip(pvals.iter().copied()));
                let pt: Vec<(&str, f64)> = point.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let got = sym.evaluate(&pt).unwrap();
                let want = build_numeric(&pr, &theta, r2, lam, &p).unwrap();
                assert!(got.sub(&want).max_abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn constant_symbolic_request() {
        let pr = prob("nesterov", 1.0, 10.0);
        let p = SymMatrix::from_rows(&[vec![1.0, 0.1], vec![0.1, 0.5]]).unwrap();
        let sym = build_symbolic(&pr, &SymbolicInputs::constant(&[0.1, 0.5], 0.6, 0.2, &p)).unwrap();
        assert_eq!(sym.degree(), 0);
        let got = sym.evaluate(&[]).unwrap();
        let want = build_numeric(&pr, &[0.1, 0.5], 0.6, 0.2, &p).unwrap();
        assert!(got.sub(&want).max_abs() < 1e-14);
    }

    #[test]
    fn symbolic_with_fixed_theta_and_homogenizer() {
        let pr = prob("nesterov", 1.0, 10.0);
        let mut inp = SymbolicInputs::indeterminate(&pr, PShape::Full).fix_theta(0, 0.1);
        inp.s = Polynomial::var("s");
        let sym = build_symbolic(&pr, &inp).unwrap();
        assert!(!sym.vars().contains(&"h".to_string()));
        let p = SymMatrix::from_rows(&[vec![1.0, 0.1], vec![0.1, 0.5]]).unwrap();
        let pt = [("beta", 0.4), ("rho2", 0.5), ("lambda", 0.2), ("p11", 1.0), ("p12", 0.1), ("p22", 0.5), ("s", 1.0)];
        let want = build_numeric(&pr, &[0.1, 0.4], 0.5, 0.2, &p).unwrap();
        assert!(sym.evaluate(&pt).unwrap().sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pr = prob("gradient", 1.0, 10.0);
        assert_eq!(build_numeric(&pr, &[0.1], 1.5, 0.0, &SymMatrix::zeros(1)), Err(CertError::Rho(1.5)));
        assert!(matches!(build_numeric(&pr, &[0.1], 0.5, 0.0, &SymMatrix::zeros(2)), Err(CertError::Dimension(_))));
    }

    #[test]
    fn trivial_certificate_at_rho_one() {
        // P = 0, λ = 0: M = [[0, 0], [0, (Lh² − 2h)/2]] ⪯ 0 for h ≤ 2/L
        let l = 10.0;
        let pr = prob("gradient", 1.0, l);
        let h = 1.0 / l;
        let cert = Certificate::new(&pr, &[h], 1.0, 0.0, SymMatrix::zeros(1)).unwrap();
        assert!((cert.margin - 0.0).abs() < 1e-15);
        let m = build_numeric(&pr, &[h], 1.0, 0.0, &SymMatrix::zeros(1)).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert!((m.get(1, 1) - (l * h * h - 2.0 * h) / 2.0).abs() < 1e-15);
        let rep = verify_certificate(&pr, &[h], &cert, 20);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn known_gradient_certificate() {
        // strictly feasible (λ, p) slightly above the rate, by grid search
        let (m, l) = (1.0, 10.0);
        let pr = prob("gradient", m, l);
        let h = 1.0 / l;
        let r2: f64 = 0.9f64.powi(2) + 0.01;
        let mut best: Option<Certificate> = None;
        for i in 0..=200 {
            for j in 0..=200 {
                let lam = 0.2 * i as f64 / 200.0;
                let p = 10.0 * j as f64 / 200.0;
                let c = Certificate::new(&pr, &[h], r2, lam, SymMatrix::from_diagonal(&[p])).unwrap();
                if best.as_ref().is_none_or(|b| c.margin > b.margin) {
                    best = Some(c);
                }
            }
        }
        let cert = best.unwrap();
        assert!(cert.margin > 0.0, "{}", cert.margin);
        let rep = verify_certificate(&pr, &[h], &cert, 20);
        assert!(rep.passed, "{rep:?}");

        let mut bad = cert.clone();
        bad.lambda = -bad.lambda;
        let rep = verify_certificate(&pr, &[h], &bad, 20);
        assert!(!rep.passed);
        assert!(rep.max_eigenvalue > 0.0);
    }

    #[test]
    fn certificate_json_round_trip() {
        let pr = prob("nesterov", 1.0, 10.0);
        let c = Certificate::new(&pr, &[0.1, 0.5], 0.7, 0.1, SymMatrix::identity(2)).unwrap();
        let j = c.to_json();
        assert!(j.contains("\"L_f\"") && j.contains("\"P\""));
        let back: Certificate = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
    }
}
