//! Rate certification at a fixed tuning θ by bisection on ρ².
//!
//! Each bisection step solves a margin problem in the homogenized variables
//! `(s, λ, P)`:
//!
//! ```text
//! maximize t  s.t.  −(M⁰(P) + s·(ρ²M¹ + (1−ρ²)M²) + λM³) ⪰ tI,
//!                   s ≥ t,  λ ≥ 0,  P ⪰ 0,  s + λ + tr P = 1
//! ```
//!
//! A positive optimum gives the certificate `(λ/s, P/s)`. Without the
//! normalization the certificates blow up as ρ² approaches the optimal rate
//! and the margin problem is unbounded.
//!
//! Problems are solved in the canonical class `(1, κ)` with `B̄` scaled by
//! `m_f` (the algorithm applied to `f/m_f`), and certificates are mapped back
//! by `λ = λ̃/m_f`, `P = m_f·P̃`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{affine_terms, CertError, Certificate, CertificateProblem, MARGIN_TOL};
use crate::linalg::{max_eigenvalue, SymMatrix};
use crate::model::{FunctionClass, StateSpace};
use crate::sdp::{self, SdpError, SdpProblem, SdpStatus, SolverOptions};

/// Default bisection tolerance on ρ².
pub const DEFAULT_EPS: f64 = 1e-4;

/// Minimum normalized margin counted as strictly feasible.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("the inequality is infeasible even at rho = 1; this tuning cannot be certified")]
    NeverFeasible,
    #[error("SDP solver failed at rho^2 = {rho2} with status {status:?}")]
    Solver { rho2: f64, status: SdpStatus },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rho2: f64,
    pub feasible: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub rho_star: f64,
    pub rho2_star: f64,
    pub certificate: Certificate,
    pub bisection_trace: Vec<TraceEntry>,
    pub iterations: usize,
}

impl AnalysisResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Optimal `t` of the normalized margin problem.
    pub margin: f64,
    pub certificate: Option<Certificate>,
    /// Dual matrix `W ⪰ 0` on the LMI block; when infeasible it separates
    /// `M` from the negative semidefinite cone.
    pub dual: SymMatrix,
}

fn canonical(prob: &CertificateProblem, theta: &[f64]) -> Result<(StateSpace<f64>, FunctionClass), AnalysisError> {
    let mut ss = prob.family.matrices(theta).map_err(CertError::from)?;
    let m = prob.fc.m;
    ss.b = ss.b.map(|v| v * m);
    let fc = FunctionClass::new(1.0, prob.fc.l / m).map_err(CertError::from)?;
    Ok((ss, fc))
}

const S_BLOCK: usize = 0;
const LAM_BLOCK: usize = 1;
const P_BLOCK: usize = 2;
const Z_BLOCK: usize = 3;

fn margin_problem(ss: &StateSpace<f64>, fc: &FunctionClass, rho2: f64) -> Result<SdpProblem, AnalysisError> {
    let n = ss.state_dim();
    let aff = affine_terms(ss, fc, rho2)?;
    let mut p = SdpProblem::new(vec![1, 1, n, n + 1]);
    let t = p.add_free(-1.0);
    for a in 0..=n {
        for b in a..=n {
            let r = p.add_constraint(0.0);
            p.add_entry(r, Z_BLOCK, a, b, if a == b { 1.0 } else { 0.5 });
            p.add_entry(r, S_BLOCK, 0, 0, aff.mixed.get(a, b));
            p.add_entry(r, LAM_BLOCK, 0, 0, aff.lambda.get(a, b));
            for ((i, j), term) in &aff.p_terms {
                let w = if i == j { 1.0 } else { 0.5 };
                p.add_entry(r, P_BLOCK, *i, *j, w * term.get(a, b));
            }
            p.add_free_coeff(r, t, aff.mixed.get(a, b) + if a == b { 1.0 } else { 0.0 });
        }
    }
    let r = p.add_constraint(1.0);
    p.add_entry(r, S_BLOCK, 0, 0, 1.0);
    p.add_entry(r, LAM_BLOCK, 0, 0, 1.0);
    for i in 0..n {
        p.add_entry(r, P_BLOCK, i, i, 1.0);
    }
    p.add_free_coeff(r, t, 1.0);
    Ok(p)
}

/// Solves the margin problem at `rho2` and returns a certificate when the
/// inequality is strictly feasible.
pub fn feasibility_at(prob: &CertificateProblem, theta: &[f64], rho2: f64) -> Result<Feasibility, AnalysisError> {
    feasibility_with(prob, theta, rho2, &SolverOptions::default())
}

pub fn feasibility_with(
    prob: &CertificateProblem,
    theta: &[f64],
    rho2: f64,
    opts: &SolverOptions,
) -> Result<Feasibility, AnalysisError> {
    if !(0.0..=1.0).contains(&rho2) {
        return Err(AnalysisError::Precondition(format!("rho^2 = {rho2} is outside [0, 1]")));
    }
    let (ss, fc) = canonical(prob, theta)?;
    let n = ss.state_dim();
    let sdp_prob = margin_problem(&ss, &fc, rho2)?;
    let sol = sdp::solve(&sdp_prob, opts)?;
    let usable = match sol.status {
        SdpStatus::Optimal => true,
        SdpStatus::IterLimit | SdpStatus::NumericalFailure => {
            sol.residuals.primal <= 1e-6 && sol.residuals.dual <= 1e-6
        }
        // the margin problem is always feasible and bounded
        SdpStatus::Infeasible | SdpStatus::Unbounded => false,
    };
    if !usable {
        return Err(AnalysisError::Solver { rho2, status: sol.status });
    }
    let t = sol.free[0];
    let mut dual = SymMatrix::zeros(n + 1);
    let mut k = 0;
    for a in 0..=n {
        for b in a..=n {
            // dual slack on the LMI block is −Σ y_ab·A_ab
            dual.set(a, b, -sol.y[k] * if a == b { 1.0 } else { 0.5 });
            k += 1;
        }
    }
    let mut out = Feasibility { feasible: false, margin: t, certificate: None, dual };
    if t < FEASIBILITY_MARGIN {
        return Ok(out);
    }
    let s = sol.x[S_BLOCK].get(0, 0) + t;
    let m = prob.fc.m;
    let lam = (sol.x[LAM_BLOCK].get(0, 0) / s / m).max(0.0);
    let p = sol.x[P_BLOCK].scale(m / s);
    let cert = Certificate::new(prob, theta, rho2, lam, p)?;
    // accept only what survives re-evaluation in the original coordinates,
    // with the same absolute tolerance the verifier applies
    if cert.margin >= -MARGIN_TOL {
        out.feasible = true;
        out.certificate = Some(cert);
    }
    Ok(out)
}

/// Smallest certifiable ρ, to within `eps` on ρ².
pub fn certify_rate(prob: &CertificateProblem, theta: &[f64], eps: f64) -> Result<AnalysisResult, AnalysisError> {
    certify_rate_with(prob, theta, eps, &SolverOptions::default())
}

pub fn certify_rate_with(
    prob: &CertificateProblem,
    theta: &[f64],
    eps: f64,
    opts: &SolverOptions,
) -> Result<AnalysisResult, AnalysisError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AnalysisError::Precondition(format!("eps = {eps} is outside (0, 1]")));
    }
    prob.family.check_theta(theta).map_err(CertError::from)?;
    let mut trace = Vec::new();
    let probe = |rho2: f64, trace: &mut Vec<TraceEntry>| -> Result<Option<Certificate>, AnalysisError> {
        let f = feasibility_with(prob, theta, rho2, opts)?;
        trace.push(TraceEntry { rho2, feasible: f.feasible, margin: f.margin });
        Ok(f.certificate)
    };
    let mut best = probe(1.0, &mut trace)?.ok_or(AnalysisError::NeverFeasible)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    if let Some(c) = probe(0.0, &mut trace)? {
        best = c;
        hi = 0.0;
    }
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut trace)? {
            Some(c) => {
                hi = mid;
                best = c;
            }
            None => lo = mid,
        }
    }
    let iterations = trace.len();
    Ok(AnalysisResult { rho_star: hi.sqrt(), rho2_star: hi, certificate: best, bisection_trace: trace, iterations })
}

/// `λ_max` of `M` at a certificate, in the certificate's own coordinates.
pub fn certificate_max_eigenvalue(prob: &CertificateProblem, cert: &Certificate) -> Result<f64, AnalysisError> {
    let m = crate::certificate::build_numeric(prob, &cert.theta, cert.rho2(), cert.lambda, &cert.p)?;
    Ok(max_eigenvalue(&m).map_err(CertError::from)?)
}
