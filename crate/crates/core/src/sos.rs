//! Sum-of-squares programs compiled to SDPs.
//!
//! Every program here has the shape "the target polynomial equals a sum of
//! Gram forms", one coefficient-matching equality per monomial. Scalar
//! multipliers contribute `[x]ᵀQ[x] · g(x)`; matrix multipliers contribute
//! `tr(S(x) G(x))` with `S(x) = (I ⊗ [x])ᵀ Q (I ⊗ [x])`. The SDP dual of the
//! coefficient-matching rows is the moment vector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigen_decomposition, SymMatrix};
use crate::poly::{monomial_basis, Monomial, PolyMatrix, Polynomial};
use crate::sdp::{self, SdpError, SdpProblem, SdpSolution, SdpStatus, SolverOptions};

/// Largest monomial basis a single Gram block may use.
pub const MAX_BASIS: usize = 200;

/// Margin below which a Gram feasibility problem counts as infeasible.
const SOS_MARGIN_TOL: f64 = 1e-7;

/// Residual bound for returned certificates.
pub const RECONSTRUCTION_TOL: f64 = 1e-7;

/// Required ratio between the two largest eigenvalues of the moment matrix
/// before a candidate point is read off.
pub const RANK_RATIO: f64 = 10.0;

/// Residual and relative-gap limits under which a solve that stopped early
/// is still used.
pub const INEXACT_RESIDUAL: f64 = 1e-4;
pub const INEXACT_GAP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("monomial basis of size {0} exceeds the limit of {MAX_BASIS}")]
    Size(usize),
    #[error("polynomial has odd degree {0}")]
    OddDegree(u32),
    #[error("relaxation order {order} is below the minimum {min}")]
    OrderTooLow { order: u32, min: u32 },
    #[error("relaxation is infeasible at order {0}")]
    Infeasible(u32),
    #[error("polynomial is not bounded below by any SOS shift")]
    Unbounded,
    #[error("SDP solver stopped with status {0:?}")]
    Numerical(SdpStatus),
    #[error("moment matrix is far from rank one (eigenvalue ratio {0:.3})")]
    NoCandidate(f64),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialBasis {
    pub vars: Vec<String>,
    pub degree: u32,
    pub monomials: Vec<Monomial>,
}

impl MonomialBasis {
    pub fn new(vars: &[String], degree: u32) -> Result<Self, SosError> {
        let monomials = monomial_basis(vars.len(), degree);
        if monomials.len() > MAX_BASIS {
            return Err(SosError::Size(monomials.len()));
        }
        Ok(MonomialBasis { vars: vars.to_vec(), degree, monomials })
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn polynomial(&self, k: usize) -> Polynomial {
        Polynomial::from_terms(self.vars.clone(), [(self.monomials[k].clone(), 1.0)])
    }
}

/// PSD Gram matrix over `I_block_dim ⊗ basis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCertificate {
    pub basis: MonomialBasis,
    pub block_dim: usize,
    pub gram: SymMatrix,
    /// Largest coefficient mismatch of the identity this certificate is part of.
    pub residual: f64,
}

impl SosCertificate {
    /// The SOS matrix `S(x)` represented by the Gram matrix (1×1 for scalar
    /// certificates).
    pub fn matrix_polynomial(&self) -> PolyMatrix {
        let nb = self.basis.len();
        PolyMatrix::from_fn(self.block_dim, |a, b| {
            let mut terms = Vec::new();
            for u in 0..nb {
                for v in 0..nb {
                    let q = self.gram.get(a * nb + u, b * nb + v);
                    terms.push((self.basis.monomials[u].mul(&self.basis.monomials[v]), q));
                }
            }
            Polynomial::from_terms(self.basis.vars.clone(), terms)
        })
    }

    /// `[x]ᵀ Q [x]` for scalar certificates.
    pub fn polynomial(&self) -> Polynomial {
        self.matrix_polynomial().get(0, 0).clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SosCheck {
    Sos(SosCertificate),
    /// `margin` is the best achievable `min eig(Q)`; `dual` the separating
    /// moment functional, one value per coefficient row.
    NotSos {
        margin: f64,
        dual: Vec<f64>,
    },
}

impl SosCheck {
    pub fn is_sos(&self) -> bool {
        matches!(self, SosCheck::Sos(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub exponents: Vec<u8>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundResult {
    pub gamma: f64,
    pub order: u32,
    pub vars: Vec<String>,
    pub s0: SosCertificate,
    pub multipliers: Vec<SosCertificate>,
    pub matrix_multipliers: Vec<SosCertificate>,
    pub moments: Vec<MomentEntry>,
    pub identity_residual: f64,
    /// `Σ|r_α|` over the residual coefficients; bounds `|r(x)|` on `[−1, 1]ⁿ`.
    pub identity_residual_l1: f64,
    pub solver_status: SdpStatus,
}

impl LowerBoundResult {
    pub fn moment(&self, exponents: &[u8]) -> Option<f64> {
        self.moments.iter().find(|m| m.exponents == exponents).map(|m| m.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

enum Multiplier<'a> {
    Scalar(&'a Polynomial),
    Matrix(&'a PolyMatrix),
}

/// Incremental Gram-program compiler.
struct Compiler {
    vars: Vec<String>,
    rows: BTreeMap<Monomial, usize>,
    prob: SdpProblem,
    blocks: Vec<(MonomialBasis, usize)>,
}

impl Compiler {
    fn new(vars: Vec<String>) -> Self {
        Compiler { vars, rows: BTreeMap::new(), prob: SdpProblem::new(Vec::new()), blocks: Vec::new() }
    }

    fn row(&mut self, m: Monomial) -> usize {
        if let Some(&r) = self.rows.get(&m) {
            return r;
        }
        let r = self.prob.add_constraint(0.0);
        self.rows.insert(m, r);
        r
    }

    fn add_block(&mut self, basis: MonomialBasis, mult: Multiplier<'_>) -> usize {
        let nb = basis.len();
        let (q, entries): (usize, Vec<(usize, usize, Polynomial)>) = match mult {
            Multiplier::Scalar(g) => (1, vec![(0, 0, g.align(&self.vars))]),
            Multiplier::Matrix(gm) => {
                let mut es = Vec::new();
                for a in 0..gm.dim() {
                    for b in a..gm.dim() {
                        es.push((a, b, gm.get(a, b).align(&self.vars)));
                    }
                }
                (gm.dim(), es)
            }
        };
        let blk = self.prob.add_block(q * nb);
        for (a, b, g) in &entries {
            if g.is_zero() {
                continue;
            }
            for u in 0..nb {
                for v in 0..nb {
                    let (i, j) = (a * nb + u, b * nb + v);
                    // upper triangle of the full block only
                    if i > j {
                        continue;
                    }
                    if a == b && u > v {
                        continue;
                    }
                    let base = basis.monomials[u].mul(&basis.monomials[v]);
                    for (beta, c) in g.terms() {
                        let r = self.row(base.mul(beta));
                        self.prob.add_entry(r, blk, i, j, c);
                    }
                }
            }
        }
        self.blocks.push((basis, q));
        blk
    }

    /// Sets right-hand sides from `target`; false if some target monomial has
    /// no Gram entry able to produce it.
    fn set_target(&mut self, target: &Polynomial) -> bool {
        let t = target.align(&self.vars);
        for (m, c) in t.terms() {
            match self.rows.get(m) {
                Some(&r) => self.prob.constraints[r].rhs = c,
                None => return false,
            }
        }
        true
    }

    fn certificates(&self, sol: &SdpSolution, residual: f64) -> Vec<SosCertificate> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, (basis, q))| SosCertificate {
                basis: basis.clone(),
                block_dim: *q,
                gram: sol.x[k].clone(),
                residual,
            })
            .collect()
    }

    /// Largest and summed absolute coefficient of the identity residual.
    fn row_residual(&self, sol: &SdpSolution) -> (f64, f64) {
        (0..self.prob.num_constraints())
            .map(|i| (self.prob.constraint_value(i, &sol.x, &sol.free) - self.prob.constraints[i].rhs).abs())
            .fold((0.0, 0.0), |(m, s), r| (f64::max(m, r), s + r))
    }
}

fn union_all<'a>(it: impl IntoIterator<Item = &'a [String]>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for vs in it {
        for v in vs {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
    }
    out
}

fn psd_projection(m: &SymMatrix) -> SymMatrix {
    match eigen_decomposition(m) {
        Ok((vals, vecs)) => {
            let n = m.dim();
            SymMatrix::from_fn(n, |i, j| (0..n).map(|k| vals[k].max(0.0) * vecs[(i, k)] * vecs[(j, k)]).sum())
        }
        Err(_) => m.clone(),
    }
}

fn gram_check(
    mut comp: Compiler,
    target: &Polynomial,
    reconstruct: impl Fn(&SosCertificate) -> f64,
    opts: &SolverOptions,
) -> Result<SosCheck, SosError> {
    if !comp.set_target(target) {
        return Ok(SosCheck::NotSos { margin: f64::NEG_INFINITY, dual: Vec::new() });
    }
    let res = sdp::feasibility_margin(&comp.prob, opts)?;
    if res.margin == f64::NEG_INFINITY {
        return Ok(SosCheck::NotSos { margin: res.margin, dual: res.solution.y });
    }
    let gram = if res.margin.is_infinite() {
        let sol = sdp::solve(&comp.prob, opts)?;
        sol.x[0].clone()
    } else {
        if res.margin < -SOS_MARGIN_TOL {
            return Ok(SosCheck::NotSos { margin: res.margin, dual: res.solution.y });
        }
        res.witness[0].clone()
    };
    let (basis, q) = comp.blocks.remove(0);
    let mut cert = SosCertificate { basis, block_dim: q, gram: psd_projection(&gram), residual: 0.0 };
    cert.residual = reconstruct(&cert);
    if cert.residual > RECONSTRUCTION_TOL {
        return Ok(SosCheck::NotSos { margin: res.margin, dual: res.solution.y });
    }
    Ok(SosCheck::Sos(cert))
}

/// Decides whether `p` is a sum of squares of polynomials of degree
/// `degree / 2`.
pub fn check_sos(p: &Polynomial, degree: u32) -> Result<SosCheck, SosError> {
    check_sos_with(p, degree, &SolverOptions::default())
}

pub fn check_sos_with(p: &Polynomial, degree: u32, opts: &SolverOptions) -> Result<SosCheck, SosError> {
    if degree % 2 == 1 {
        return Err(SosError::OddDegree(degree));
    }
    if p.degree() > degree {
        return Ok(SosCheck::NotSos { margin: f64::NEG_INFINITY, dual: Vec::new() });
    }
    let vars = p.vars().to_vec();
    let basis = MonomialBasis::new(&vars, degree / 2)?;
    let one = Polynomial::constant(1.0);
    let mut comp = Compiler::new(vars);
    comp.add_block(basis, Multiplier::Scalar(&one));
    let target = p.clone();
    gram_check(comp, p, |c| (&target - &c.polynomial()).max_abs_coefficient(), opts)
}

/// Decides whether `m` is an SOS matrix, i.e. `zᵀ M(x) z` is SOS in the
/// bilinear basis `z_i · [x]_d`.
pub fn check_sos_matrix(m: &PolyMatrix) -> Result<SosCheck, SosError> {
    check_sos_matrix_with(m, &SolverOptions::default())
}

pub fn check_sos_matrix_with(m: &PolyMatrix, opts: &SolverOptions) -> Result<SosCheck, SosError> {
    // off-diagonal entries may have odd degree; the basis covers the
    // rounded-up half degree
    let deg = m.degree();
    let vars = m.vars();
    let basis = MonomialBasis::new(&vars, deg.div_ceil(2))?;
    if basis.len() * m.dim() > MAX_BASIS {
        return Err(SosError::Size(basis.len() * m.dim()));
    }
    // tr(S M') = tr(S M) for M' the identity-selector trick: matching S(x)
    // against M(x) entrywise is a Gram program with multiplier E_ab.
    let mut comp = Compiler::new(vars.clone());
    let blk = comp.prob.add_block(m.dim() * basis.len());
    let nb = basis.len();
    let q = m.dim();
    // rows indexed by (a, b, monomial) flattened into a monomial over
    // auxiliary exponents: use separate maps per entry pair
    let mut rows: BTreeMap<(usize, usize, Monomial), usize> = BTreeMap::new();
    for i in 0..q * nb {
        for j in i..q * nb {
            let (a, u) = (i / nb, i % nb);
            let (b, v) = (j / nb, j % nb);
            let key = (a.min(b), a.max(b), basis.monomials[u].mul(&basis.monomials[v]));
            let r = *rows.entry(key).or_insert_with(|| comp.prob.add_constraint(0.0));
            // an off-diagonal Gram entry within a diagonal pair counts twice
            // toward S_aa; across pairs it counts once toward S_ab
            let w = if a == b || i == j { 1.0 } else { 0.5 };
            comp.prob.add_entry(r, blk, i, j, w);
        }
    }
    for a in 0..q {
        for b in a..q {
            let e = m.get(a, b).align(&vars);
            for (mono, c) in e.terms() {
                match rows.get(&(a, b, mono.clone())) {
                    Some(&r) => comp.prob.constraints[r].rhs = c,
                    None => return Ok(SosCheck::NotSos { margin: f64::NEG_INFINITY, dual: Vec::new() }),
                }
            }
        }
    }
    comp.blocks.push((basis, q));
    let target = m.clone();
    let reconstruct = |c: &SosCertificate| {
        let s = c.matrix_polynomial();
        let mut worst: f64 = 0.0;
        for a in 0..q {
            for b in a..q {
                worst = worst.max((target.get(a, b) - s.get(a, b)).max_abs_coefficient());
            }
        }
        worst
    };
    // the generic routine sets right-hand sides from a scalar target; here
    // they are already in place, so pass the zero polynomial
    gram_check(comp, &Polynomial::zero(), reconstruct, opts)
}

/// `max γ` with `p - γ` SOS.
pub fn lower_bound_unconstrained(p: &Polynomial) -> Result<LowerBoundResult, SosError> {
    let deg = p.degree();
    if deg % 2 == 1 {
        return Err(SosError::Unbounded);
    }
    match lower_bound_general(p, &[], &[], deg / 2, &SolverOptions::default()) {
        Err(SosError::Infeasible(_)) => Err(SosError::Unbounded),
        other => other,
    }
}

/// `max γ` with `p - γ = s0 + Σ s_i g_i`, multiplier degrees fitted to
/// `2·order`.
pub fn lower_bound_constrained(p: &Polynomial, g: &[Polynomial], order: u32) -> Result<LowerBoundResult, SosError> {
    lower_bound_general(p, g, &[], order, &SolverOptions::default())
}

/// Smallest admissible relaxation order.
pub fn min_order(p: &Polynomial, g: &[Polynomial], mats: &[PolyMatrix]) -> u32 {
    let mut d = p.degree();
    for gi in g {
        d = d.max(gi.degree());
    }
    for m in mats {
        d = d.max(m.degree());
    }
    d.div_ceil(2).max(1)
}

/// Constrained bound with scalar constraints `g_i(x) ≥ 0` and matrix
/// constraints `G_j(x) ⪰ 0`.
pub fn lower_bound_general(
    p: &Polynomial,
    g: &[Polynomial],
    mats: &[PolyMatrix],
    order: u32,
    opts: &SolverOptions,
) -> Result<LowerBoundResult, SosError> {
    let min = min_order(p, g, mats);
    if order < min {
        return Err(SosError::OrderTooLow { order, min });
    }
    let mat_vars: Vec<Vec<String>> = mats.iter().map(|m| m.vars()).collect();
    let vars = union_all(
        std::iter::once(p.vars()).chain(g.iter().map(|gi| gi.vars())).chain(mat_vars.iter().map(|v| v.as_slice())),
    );
    // unit max-norm scaling of the data; constraints keep their sign
    let pscale = p.max_abs_coefficient().max(f64::MIN_POSITIVE);
    let target = p.scale(1.0 / pscale);
    let g_scaled: Vec<Polynomial> =
        g.iter().map(|gi| gi.scale(1.0 / gi.max_abs_coefficient().max(f64::MIN_POSITIVE))).collect();
    let m_scaled: Vec<PolyMatrix> = mats
        .iter()
        .map(|m| {
            let mut s: f64 = 0.0;
            for a in 0..m.dim() {
                for b in a..m.dim() {
                    s = s.max(m.get(a, b).max_abs_coefficient());
                }
            }
            let s = s.max(f64::MIN_POSITIVE);
            m.map(|e| e.scale(1.0 / s))
        })
        .collect();

    let mut comp = Compiler::new(vars.clone());
    let one = Polynomial::constant(1.0);
    comp.add_block(MonomialBasis::new(&vars, order)?, Multiplier::Scalar(&one));
    for gi in &g_scaled {
        let k = (2 * order - gi.degree()) / 2;
        comp.add_block(MonomialBasis::new(&vars, k)?, Multiplier::Scalar(gi));
    }
    for m in &m_scaled {
        let k = (2 * order - m.degree()) / 2;
        let basis = MonomialBasis::new(&vars, k)?;
        if basis.len() * m.dim() > MAX_BASIS {
            return Err(SosError::Size(basis.len() * m.dim()));
        }
        comp.add_block(basis, Multiplier::Matrix(m));
    }
    let gamma = comp.prob.add_free(-1.0);
    let r0 = comp.row(Monomial::one(vars.len()));
    comp.prob.add_free_coeff(r0, gamma, 1.0);
    if !comp.set_target(&target) {
        return Err(SosError::Infeasible(order));
    }
    let sol = sdp::solve(&comp.prob, opts)?;
    let usable = match sol.status {
        SdpStatus::Optimal => true,
        SdpStatus::IterLimit | SdpStatus::NumericalFailure => {
            sol.residuals.primal <= INEXACT_RESIDUAL
                && sol.residuals.dual <= INEXACT_RESIDUAL
                && sol.residuals.gap <= INEXACT_GAP
        }
        SdpStatus::Infeasible => return Err(SosError::Infeasible(order)),
        SdpStatus::Unbounded => {
            // γ unbounded above: the constraint set is empty
            false
        }
    };
    if sol.status == SdpStatus::Unbounded {
        let certs = comp.certificates(&sol, 0.0);
        return Ok(assemble(f64::INFINITY, order, vars, certs, g.len(), Vec::new(), (0.0, 0.0), sol.status));
    }
    if !usable {
        return Err(SosError::Numerical(sol.status));
    }
    let (residual, residual_l1) = comp.row_residual(&sol);
    let (residual, residual_l1) = (residual * pscale, residual_l1 * pscale);
    let certs = comp.certificates(&sol, residual);
    let moments: Vec<MomentEntry> =
        comp.rows.iter().map(|(m, &r)| MomentEntry { exponents: m.exponents().to_vec(), value: -sol.y[r] }).collect();
    // normalize so the constant moment is exactly one
    let m0 = moments.iter().find(|m| m.exponents.iter().all(|&e| e == 0)).map_or(1.0, |m| m.value);
    let moments = moments
        .into_iter()
        .map(|m| MomentEntry { value: if m0 != 0.0 { m.value / m0 } else { m.value }, ..m })
        .collect();
    let gamma_v = sol.free[gamma] * pscale;
    Ok(assemble(gamma_v, order, vars, certs, g.len(), moments, (residual, residual_l1), sol.status))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    gamma: f64,
    order: u32,
    vars: Vec<String>,
    mut certs: Vec<SosCertificate>,
    nscalar: usize,
    moments: Vec<MomentEntry>,
    residual: (f64, f64),
    status: SdpStatus,
) -> LowerBoundResult {
    let matrix_multipliers = certs.split_off(1 + nscalar);
    let multipliers = certs.split_off(1);
    let s0 = certs.pop().expect("s0 block");
    LowerBoundResult {
        gamma,
        order,
        vars,
        s0,
        multipliers,
        matrix_multipliers,
        moments,
        identity_residual: residual.0,
        identity_residual_l1: residual.1,
        solver_status: status,
    }
}

/// Reads first-order moments of `vars` (all relaxation variables when
/// `None`) as a candidate minimizer, provided the degree-one moment matrix
/// of those variables is numerically rank one.
pub fn moment_candidate(res: &LowerBoundResult, vars: Option<&[&str]>) -> Result<Vec<f64>, SosError> {
    let idx: Vec<usize> = match vars {
        None => (0..res.vars.len()).collect(),
        Some(vs) => vs
            .iter()
            .map(|v| res.vars.iter().position(|w| w == v).ok_or(SosError::NoCandidate(0.0)))
            .collect::<Result<_, _>>()?,
    };
    let n = res.vars.len();
    let mono = |pairs: &[usize]| {
        let mut e = vec![0u8; n];
        for &k in pairs {
            e[k] += 1;
        }
        e
    };
    let first: Vec<f64> =
        idx.iter().map(|&k| res.moment(&mono(&[k])).ok_or(SosError::NoCandidate(0.0))).collect::<Result<_, _>>()?;
    let d = idx.len() + 1;
    let mut mm = SymMatrix::zeros(d);
    mm.set(0, 0, 1.0);
    for (a, &ka) in idx.iter().enumerate() {
        mm.set(0, a + 1, first[a]);
        for (b, &kb) in idx.iter().enumerate().skip(a) {
            let v = res.moment(&mono(&[ka, kb])).ok_or(SosError::NoCandidate(0.0))?;
            mm.set(a + 1, b + 1, v);
        }
    }
    let vals = crate::linalg::eigenvalues(&mm).map_err(|_| SosError::NoCandidate(0.0))?;
    let top = vals[d - 1];
    let second = vals[d - 2].max(0.0);
    let ratio = if second > 0.0 { top / second } else { f64::INFINITY };
    if ratio < RANK_RATIO {
        return Err(SosError::NoCandidate(ratio));
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> Polynomial {
        s.parse().unwrap()
    }

    fn sos_cert(c: SosCheck) -> SosCertificate {
        match c {
            SosCheck::Sos(c) => c,
            SosCheck::NotSos { margin, .. } => panic!("expected SOS, margin {margin}"),
        }
    }

    #[test]
    fn perfect_square_is_sos() {
        let q = p("x^4 + 2*x^2 + 1");
        let c = sos_cert(check_sos(&q, 4).unwrap());
        assert_eq!(c.basis.len(), 3);
        assert!(crate::linalg::is_psd(&c.gram, 1e-9));
        assert!((&q - &c.polynomial()).max_abs_coefficient() <= RECONSTRUCTION_TOL);
    }

    #[test]
    fn negative_somewhere_is_not_sos() {
        assert!(!check_sos(&p("x^2 - 1"), 2).unwrap().is_sos());
    }

    #[test]
    fn motzkin_is_not_sos() {
        let m = p("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1");
        match check_sos(&m, 6).unwrap() {
            SosCheck::NotSos { margin, .. } => assert!(margin < -1e-4, "{margin}"),
            SosCheck::Sos(_) => panic!("Motzkin accepted"),
        }
        // nonnegative on a grid, so the rejection is not a sign error
        for i in -20..=20 {
            for j in -20..=20 {
                let (x, y) = (i as f64 / 10.0, j as f64 / 10.0);
                assert!(m.evaluate([("x", x), ("y", y)]).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn sos_implies_nonnegative_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let polys = ["x^4 + 2*x^2*y^2 + y^4 + 1", "(x - y)^2 + (x*y - 1)^2", "x^2 + y^2 + 2*x*y + 0.5"];
        for s in polys {
            let q = p(s);
            assert!(check_sos(&q, 4).unwrap().is_sos(), "{s}");
            for _ in 0..10_000 {
                let (x, y) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                assert!(q.evaluate([("x", x), ("y", y)]).unwrap() >= -1e-6);
            }
        }
    }

    #[test]
    fn sos_matrix_examples() {
        let c = PolyMatrix::constant(&SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap());
        assert!(check_sos_matrix(&c).unwrap().is_sos());

        let r1 = PolyMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => p("1"),
            (0, 1) => p("x"),
            _ => p("x^2"),
        });
        let cert = sos_cert(check_sos_matrix(&r1).unwrap());
        assert_eq!(cert.block_dim, 2);
        assert!(cert.residual <= RECONSTRUCTION_TOL);

        let bad = PolyMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => p("1"),
            (0, 1) => p("x"),
            _ => Polynomial::zero(),
        });
        assert!(!check_sos_matrix(&bad).unwrap().is_sos());
        // oracle: indefinite at x = 1
        let at1 = bad.evaluate(&[("x", 1.0)]).unwrap();
        assert!(crate::linalg::min_eigenvalue(&at1).unwrap() < 0.0);
    }

    #[test]
    fn unconstrained_bounds() {
        assert!(lower_bound_unconstrained(&p("x^2")).unwrap().gamma.abs() < 1e-6);
        assert!(lower_bound_unconstrained(&p("(x^2 - 1)^2")).unwrap().gamma.abs() < 1e-6);
        // oracle: d/dx (x^4 - 3x^2) = 0 at x^2 = 3/2, value -9/4
        let xs: f64 = 1.5;
        let want = xs * xs - 3.0 * xs;
        let r = lower_bound_unconstrained(&p("x^4 - 3*x^2")).unwrap();
        assert!((r.gamma - want).abs() < 1e-6, "{}", r.gamma);
        assert!(r.identity_residual <= RECONSTRUCTION_TOL);
        assert_eq!(lower_bound_unconstrained(&p("x^3")), Err(SosError::Unbounded));
        assert_eq!(lower_bound_unconstrained(&p("-x^2")), Err(SosError::Unbounded));
    }

    #[test]
    fn constrained_bounds() {
        let r = lower_bound_constrained(&p("x"), &[p("1 - x^2")], 1).unwrap();
        assert!((r.gamma + 1.0).abs() < 1e-6, "{}", r.gamma);
        let r = lower_bound_constrained(&p("x^2"), &[p("x - 1")], 1).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-6, "{}", r.gamma);
        assert!(matches!(lower_bound_constrained(&p("x^4"), &[], 1), Err(SosError::OrderTooLow { order: 1, min: 2 })));
    }

    #[test]
    fn candidates() {
        let r = lower_bound_unconstrained(&p("(x - 2)^2")).unwrap();
        let c = moment_candidate(&r, None).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-3, "{c:?}");
        let r = lower_bound_constrained(&p("x"), &[p("1 - x^2")], 1).unwrap();
        let c = moment_candidate(&r, Some(&["x"])).unwrap();
        assert!((c[0] + 1.0).abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn bounds_never_exceed_feasible_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obj = p("x^2*y - x + y^2");
        let g = [p("1 - x^2 - y^2")];
        for order in [2, 3] {
            let r = lower_bound_constrained(&obj, &g, order).unwrap();
            for _ in 0..2000 {
                let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if x * x + y * y <= 1.0 {
                    assert!(r.gamma <= obj.evaluate([("x", x), ("y", y)]).unwrap() + 1e-6);
                }
            }
        }
    }

    #[test]
    fn hierarchy_is_monotone() {
        let problems: [(&str, Vec<&str>); 3] = [
            ("x^2*y - x + y^2", vec!["1 - x^2 - y^2"]),
            ("x^4 - 3*x^2 + y", vec!["y + 1", "1 - y", "2 - x^2"]),
            ("-x - y", vec!["1 - x^2 - y^2", "x*y"]),
        ];
        for (obj, cons) in problems {
            let obj = p(obj);
            let g: Vec<Polynomial> = cons.iter().map(|s| p(s)).collect();
            let lo = min_order(&obj, &g, &[]);
            let mut prev = f64::NEG_INFINITY;
            for order in lo..lo + 2 {
                let r = lower_bound_constrained(&obj, &g, order).unwrap();
                assert!(r.gamma >= prev - 1e-6, "order {order}: {} < {prev}", r.gamma);
                prev = r.gamma;
            }
        }
    }

    #[test]
    fn matrix_constraint_bound() {
        // min x s.t. [[1, x], [x, 1]] ⪰ 0, i.e. |x| <= 1
        let m = PolyMatrix::from_fn(2, |i, j| if i == j { p("1") } else { p("x") });
        let r = lower_bound_general(&p("x"), &[], &[m], 1, &SolverOptions::default()).unwrap();
        assert!((r.gamma + 1.0).abs() < 1e-6, "{}", r.gamma);
        assert_eq!(r.matrix_multipliers.len(), 1);
    }

    #[test]
    fn result_serializes() {
        let r = lower_bound_unconstrained(&p("x^4 - 3*x^2")).unwrap();
        let back: LowerBoundResult = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.gamma, r.gamma);
        assert_eq!(back.moments.len(), r.moments.len());
    }
}
