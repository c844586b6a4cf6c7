//! Tuning θ within a box Θ to minimize the certified rate.
//!
//! Two designers are provided: an exhaustive grid sweep with per-point
//! bisection, and a moment relaxation of the joint polynomial program in
//! `(ρ², θ, λ, P)`. Relaxation candidates are never trusted directly: every
//! reported θ is re-certified by [`certify_rate`], so `rho_certified` is
//! always a sound upper bound and `rho_lower_bound` (when present) a sound
//! lower bound on the best rate over Θ.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{certify_rate, AnalysisError, AnalysisResult};
use crate::certificate::{
    assemble_symbolic, p_var_names, verify_certificate_seeded, CertError, CertificateProblem, PShape, SymbolicInputs,
    VerificationReport,
};
use crate::mat::Mat;
use crate::model::{AlgorithmFamily, FunctionClass};
use crate::poly::{MinorSelection, PolyMatrix, Polynomial};
use crate::sdp::SolverOptions;
use crate::sos::{lower_bound_general, min_order, moment_candidate, SosError};

/// Upper limit on the number of grid points.
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid design specification: {0}")]
    Spec(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no grid point certifies a rate below 1")]
    AllInfeasible,
    #[error("relaxation gave lower bound rho >= {rho_lower_bound:.6} at order {order} but no usable candidate")]
    ExtractionFailed { rho_lower_bound: f64, order: u32 },
    #[error("relaxation is infeasible up to order {0}")]
    RelaxationInfeasible(u32),
    #[error("unsupported design problem: {0}")]
    Unsupported(String),
    #[error("unknown design method '{0}'")]
    UnknownMethod(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    Sos,
    Both,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Grid => "grid",
            Method::Sos => "sos",
            Method::Both => "both",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = DesignError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(Method::Grid),
            "sos" => Ok(Method::Sos),
            "both" => Ok(Method::Both),
            _ => Err(DesignError::UnknownMethod(s.to_string())),
        }
    }
}

/// How `−M ⪰ 0` enters the polynomial program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    /// A single matrix constraint handled with an SOS-matrix multiplier.
    #[default]
    SosMatrix,
    /// `tr(−M) ≥ 0`, `det(−M) ≥ 0`; exact for 2×2 only.
    TraceDet,
    /// Every principal minor of `−M` nonnegative.
    Minors,
}

impl Scalarization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scalarization::SosMatrix => "sos_matrix",
            Scalarization::TraceDet => "trace_det",
            Scalarization::Minors => "minors",
        }
    }
}

impl std::str::FromStr for Scalarization {
    type Err = DesignError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "sos_matrix" | "matrix" => Ok(Scalarization::SosMatrix),
            "trace_det" => Ok(Scalarization::TraceDet),
            "minors" => Ok(Scalarization::Minors),
            _ => Err(DesignError::Spec(format!("unknown scalarization '{s}'"))),
        }
    }
}

/// A tuning problem: family, function class, box Θ and pinned parameters.
#[derive(Clone)]
pub struct DesignSpec {
    pub family: Arc<dyn AlgorithmFamily>,
    pub fc: FunctionClass,
    pub param_box: Vec<(f64, f64)>,
    pub frozen: Vec<Option<f64>>,
    pub method: Method,
}

impl fmt::Debug for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DesignSpec")
            .field("family", &self.family.name())
            .field("fc", &self.fc)
            .field("param_box", &self.param_box)
            .field("frozen", &self.frozen)
            .field("method", &self.method)
            .finish()
    }
}

impl DesignSpec {
    /// The family's default box, nothing frozen, grid method.
    pub fn new(family: Arc<dyn AlgorithmFamily>, fc: FunctionClass) -> Self {
        let param_box = family.default_box(&fc);
        let frozen = vec![None; param_box.len()];
        DesignSpec { family, fc, param_box, frozen, method: Method::Grid }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_box(mut self, name: &str, lo: f64, hi: f64) -> Result<Self, DesignError> {
        let k = self.index_of(name)?;
        self.param_box[k] = (lo, hi);
        Ok(self)
    }

    pub fn freeze(mut self, name: &str, value: f64) -> Result<Self, DesignError> {
        let k = self.index_of(name)?;
        self.frozen[k] = Some(value);
        Ok(self)
    }

    fn index_of(&self, name: &str) -> Result<usize, DesignError> {
        self.family
            .param_names()
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| DesignError::Spec(format!("family '{}' has no parameter '{name}'", self.family.name())))
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let names = self.family.param_names();
        if self.param_box.len() != names.len() || self.frozen.len() != names.len() {
            return Err(DesignError::Spec(format!("box and frozen list must have {} entries", names.len())));
        }
        for (k, &(lo, hi)) in self.param_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(DesignError::Spec(format!("empty or unbounded box [{lo}, {hi}] for {}", names[k])));
            }
            if let Some(v) = self.frozen[k] {
                if !(v >= lo && v <= hi) {
                    return Err(DesignError::Spec(format!("{} = {v} is frozen outside [{lo}, {hi}]", names[k])));
                }
            }
        }
        Ok(())
    }

    /// Per-parameter interval actually searched (a point for frozen or
    /// degenerate entries).
    pub fn effective_box(&self) -> Vec<(f64, f64)> {
        self.param_box.iter().zip(&self.frozen).map(|(&b, f)| f.map_or(b, |v| (v, v))).collect()
    }

    /// Indices of parameters with a nondegenerate search interval.
    pub fn free_indices(&self) -> Vec<usize> {
        self.effective_box().iter().enumerate().filter(|(_, (lo, hi))| hi > lo).map(|(k, _)| k).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.param_box.len()
            && self.effective_box().iter().zip(theta).all(|(&(lo, hi), &t)| t >= lo && t <= hi)
    }

    pub fn problem(&self) -> CertificateProblem {
        CertificateProblem::new(self.family.clone(), self.fc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Grid points per free parameter.
    pub resolution: usize,
    pub coarse_eps: f64,
    pub fine_eps: f64,
    pub scalarization: Scalarization,
    /// Starting relaxation order; the smallest admissible one when `None`.
    pub order: Option<u32>,
    pub max_order: u32,
    /// Sandwich gap above which the relaxation order is raised.
    pub gap_tol: f64,
    pub polish: bool,
    /// Half-width of the polish window as a fraction of each box width.
    pub polish_window: f64,
    pub verify_trials: usize,
    pub seed: u64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            resolution: 50,
            coarse_eps: 1e-3,
            fine_eps: 1e-4,
            scalarization: Scalarization::SosMatrix,
            order: None,
            max_order: 3,
            gap_tol: 2e-2,
            polish: true,
            polish_window: 0.05,
            verify_trials: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: Vec<f64>,
    pub rho: Option<f64>,
    pub feasible: bool,
}

/// One relaxation solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderAttempt {
    pub order: u32,
    pub rho_lower_bound: Option<f64>,
    pub candidate: Option<Vec<f64>>,
    pub rho_candidate: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    pub scalarization: Scalarization,
    /// Order that produced the reported lower bound.
    pub order: u32,
    pub variables: Vec<String>,
    /// Lower bound on ρ² after the residual correction.
    pub gamma: f64,
    /// Extracted θ before polishing.
    pub candidate: Vec<f64>,
    pub rho_candidate: Option<f64>,
    pub attempts: Vec<OrderAttempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub method: String,
    pub family: String,
    pub param_names: Vec<String>,
    pub theta_star: Vec<f64>,
    pub rho_certified: f64,
    pub rho_lower_bound: Option<f64>,
    pub gap: Option<f64>,
    pub analysis: AnalysisResult,
    pub verification: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_table: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<RelaxationReport>,
}

impl DesignResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design results serialize")
    }
}

/// A design strategy.
pub trait Designer: Send + Sync {
    fn name(&self) -> &str;
    fn design(&self, spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError>;
}

#[derive(Debug, Default)]
pub struct GridDesigner;

#[derive(Debug, Default)]
pub struct SosDesigner;

/// Runs the relaxation and the sweep and keeps the better certified point.
#[derive(Debug, Default)]
pub struct CombinedDesigner;

impl Designer for GridDesigner {
    fn name(&self) -> &str {
        "grid"
    }
    fn design(&self, spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
        design_grid(spec, opts)
    }
}

impl Designer for SosDesigner {
    fn name(&self) -> &str {
        "sos"
    }
    fn design(&self, spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
        design_sos(spec, opts)
    }
}

impl Designer for CombinedDesigner {
    fn name(&self) -> &str {
        "both"
    }
    fn design(&self, spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
        let grid = design_grid(spec, opts)?;
        let sos = match design_sos(spec, opts) {
            Ok(r) => r,
            Err(DesignError::ExtractionFailed { rho_lower_bound, .. }) => {
                let mut g = grid;
                g.method = "both".into();
                g.rho_lower_bound = Some(rho_lower_bound);
                g.gap = Some(g.rho_certified - rho_lower_bound);
                return Ok(g);
            }
            Err(e) => return Err(e),
        };
        let mut best = if sos.rho_certified <= grid.rho_certified { sos.clone() } else { grid.clone() };
        best.method = "both".into();
        best.sweep_table = grid.sweep_table;
        best.relaxation = sos.relaxation;
        best.rho_lower_bound = sos.rho_lower_bound;
        best.gap = best.rho_lower_bound.map(|lb| best.rho_certified - lb);
        Ok(best)
    }
}

/// Name-keyed designers.
pub struct DesignerRegistry {
    designers: BTreeMap<String, Arc<dyn Designer>>,
}

impl DesignerRegistry {
    pub fn empty() -> Self {
        DesignerRegistry { designers: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(GridDesigner));
        r.register(Arc::new(SosDesigner));
        r.register(Arc::new(CombinedDesigner));
        r
    }

    pub fn register(&mut self, d: Arc<dyn Designer>) {
        self.designers.insert(d.name().to_string(), d);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Designer>> {
        self.designers.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&str> {
        self.designers.keys().map(|s| s.as_str()).collect()
    }
}

impl Default for DesignerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Dispatches on `spec.method` through the builtin registry.
pub fn design(spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
    let d = DesignerRegistry::with_builtins().get(spec.method.as_str()).expect("builtin method");
    d.design(spec, opts)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo || n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid points in row-major order (last parameter fastest).
pub fn grid_points(spec: &DesignSpec, resolution: usize) -> Result<Vec<Vec<f64>>, DesignError> {
    let axes: Vec<Vec<f64>> = spec.effective_box().iter().map(|&(lo, hi)| linspace(lo, hi, resolution)).collect();
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    match total {
        Some(t) if t <= MAX_GRID_POINTS => {}
        _ => return Err(DesignError::Precondition(format!("grid exceeds {MAX_GRID_POINTS} points"))),
    }
    let mut pts = vec![Vec::new()];
    for axis in &axes {
        pts = pts.into_iter().flat_map(|p| axis.iter().map(move |&v| [p.as_slice(), &[v]].concat())).collect();
    }
    Ok(pts)
}

fn finish(
    spec: &DesignSpec,
    opts: &DesignOptions,
    method: &str,
    theta: Vec<f64>,
    analysis: AnalysisResult,
) -> DesignResult {
    let prob = spec.problem();
    let verification = verify_certificate_seeded(&prob, &theta, &analysis.certificate, opts.verify_trials, opts.seed);
    DesignResult {
        method: method.to_string(),
        family: spec.family.name().to_string(),
        param_names: spec.family.param_names().to_vec(),
        theta_star: theta,
        rho_certified: analysis.rho_star,
        rho_lower_bound: None,
        gap: None,
        analysis,
        verification: Some(verification),
        sweep_table: None,
        relaxation: None,
    }
}

/// Exhaustive sweep: coarse bisection at every grid point, then a fine
/// re-certification of the argmin.
pub fn design_grid(spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
    spec.validate()?;
    if opts.resolution < 2 && !spec.free_indices().is_empty() {
        return Err(DesignError::Precondition("resolution must be at least 2".into()));
    }
    let pts = grid_points(spec, opts.resolution)?;
    let prob = spec.problem();
    let rhos: Vec<Result<Option<f64>, DesignError>> = pts
        .par_iter()
        .map(|theta| match certify_rate(&prob, theta, opts.coarse_eps) {
            Ok(r) if r.rho_star < 1.0 => Ok(Some(r.rho_star)),
            Ok(_) | Err(AnalysisError::NeverFeasible) => Ok(None),
            // a solver breakdown at one point is reported as uncertified
            Err(AnalysisError::Solver { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect();
    let mut table = Vec::with_capacity(pts.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, (theta, r)) in pts.into_iter().zip(rhos).enumerate() {
        let rho = r?;
        if let Some(v) = rho {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
        table.push(SweepRow { theta, rho, feasible: rho.is_some() });
    }
    let (k, _) = best.ok_or(DesignError::AllInfeasible)?;
    let theta = table[k].theta.clone();
    let analysis = certify_rate(&prob, &theta, opts.fine_eps)?;
    let mut out = finish(spec, opts, "grid", theta, analysis);
    out.sweep_table = Some(table);
    Ok(out)
}

/// The polynomial program handed to the moment relaxation.
#[derive(Debug, Clone)]
pub struct RelaxationProblem {
    pub objective: Polynomial,
    pub constraints: Vec<Polynomial>,
    pub matrix_constraints: Vec<PolyMatrix>,
    /// Unit-box variable for each free parameter, in parameter order.
    pub theta_vars: Vec<String>,
    pub free: Vec<usize>,
    /// `−M` in the relaxation variables.
    pub neg_m: PolyMatrix,
}

fn unit_var(name: &str) -> String {
    format!("u_{name}")
}

/// Builds the design program in the canonical class `(1, κ)`.
///
/// Variables: `rho2`, one `u_k ∈ [0, 1]` per free parameter with
/// `θ_k = lo_k + (hi_k − lo_k)·u_k`, a scaled multiplier `lambda = (1+κ)λ̃`,
/// and the entries of `P`. The weight on the function-value terms is
/// `s = 1 − lambda − tr P ≥ 0`, which keeps the feasible set compact; the
/// optimal ρ² of this program is the infimum certifiable over Θ.
pub fn relaxation_problem(spec: &DesignSpec, scalarization: Scalarization) -> Result<RelaxationProblem, DesignError> {
    spec.validate()?;
    let family = &spec.family;
    let mut sym = family
        .symbolic()
        .ok_or_else(|| DesignError::Unsupported(format!("family '{}' has no symbolic form", family.name())))?;
    let kappa = spec.fc.condition_number();
    let canon = FunctionClass::new(1.0, kappa).map_err(CertError::from)?;
    sym.b = sym.b.map(|e| e.scale(spec.fc.m));

    let names = family.param_names();
    let bx = spec.effective_box();
    let free = spec.free_indices();
    let mut theta = Vec::with_capacity(names.len());
    let mut theta_vars = Vec::new();
    let mut constraints = vec![Polynomial::var("rho2"), Polynomial::constant(1.0).sub_poly(&Polynomial::var("rho2"))];
    for (k, name) in names.iter().enumerate() {
        let (lo, hi) = bx[k];
        if free.contains(&k) {
            let u = unit_var(name);
            let uv = Polynomial::var(&u);
            theta.push(Polynomial::constant(lo).add_poly(&uv.scale(hi - lo)));
            constraints.push(uv.clone());
            constraints.push(Polynomial::constant(1.0).sub_poly(&uv));
            theta_vars.push(u);
        } else {
            theta.push(Polynomial::constant(lo));
        }
    }

    let n = family.state_dim();
    let shape = if n == 1 { PShape::Scalar } else { PShape::Full };
    let pnames = p_var_names(n, shape);
    let p = match shape {
        PShape::Scalar => Mat::identity(n).scale(&Polynomial::var(&pnames[0])),
        PShape::Full => {
            let mut m = Mat::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    let v = Polynomial::var(&pnames[k]);
                    m.set(i, j, v.clone());
                    m.set(j, i, v);
                    k += 1;
                }
            }
            m
        }
    };
    let mu = Polynomial::var("lambda");
    let mut s = Polynomial::constant(1.0).sub_poly(&mu);
    for i in 0..n {
        s = s.sub_poly(p.get(i, i));
    }
    constraints.push(mu.clone());
    constraints.push(s.clone());
    if n == 1 {
        constraints.push(p.get(0, 0).clone());
    } else {
        let pm = PolyMatrix::from_mat(&p, 0.0).expect("P is symmetric");
        constraints
            .extend(pm.principal_minors(MinorSelection::All).map_err(|e| DesignError::Unsupported(e.to_string()))?);
    }

    let inputs = SymbolicInputs { theta, rho2: Polynomial::var("rho2"), lambda: mu.scale(1.0 / (1.0 + kappa)), p, s };
    let m = assemble_symbolic(&sym, names, &canon, &inputs)?;
    let neg_m = m.neg();
    let mut matrix_constraints = Vec::new();
    match scalarization {
        Scalarization::SosMatrix => matrix_constraints.push(neg_m.clone()),
        Scalarization::TraceDet => {
            let (t, d) = neg_m.trace_det().map_err(|_| {
                DesignError::Unsupported(format!("trace/det needs a 2×2 inequality, got {0}×{0}", neg_m.dim()))
            })?;
            constraints.push(t);
            constraints.push(d);
        }
        Scalarization::Minors => {
            constraints.extend(
                neg_m.principal_minors(MinorSelection::All).map_err(|e| DesignError::Unsupported(e.to_string()))?,
            );
        }
    }
    Ok(RelaxationProblem {
        objective: Polynomial::var("rho2"),
        constraints,
        matrix_constraints,
        theta_vars,
        free,
        neg_m,
    })
}

fn theta_from_units(spec: &DesignSpec, free: &[usize], units: &[f64]) -> Vec<f64> {
    let bx = spec.effective_box();
    let mut theta: Vec<f64> = bx.iter().map(|b| b.0).collect();
    for (&k, &u) in free.iter().zip(units) {
        let (lo, hi) = bx[k];
        theta[k] = (lo + (hi - lo) * u.clamp(0.0, 1.0)).clamp(lo, hi);
    }
    theta
}

fn rate_or_one(prob: &CertificateProblem, theta: &[f64], eps: f64) -> f64 {
    match certify_rate(prob, theta, eps) {
        Ok(r) => r.rho_star,
        Err(_) => 1.0 + 1e-3,
    }
}

/// Coordinate-wise golden-section search on the certified rate, restricted
/// to a window around `theta`.
fn polish(spec: &DesignSpec, opts: &DesignOptions, free: &[usize], theta: Vec<f64>) -> (Vec<f64>, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let prob = spec.problem();
    let bx = spec.effective_box();
    let mut best = theta;
    let mut best_rho = rate_or_one(&prob, &best, opts.fine_eps);
    for _pass in 0..2 {
        for &k in free {
            let (lo, hi) = bx[k];
            let w = opts.polish_window * (hi - lo);
            let (mut a, mut b) = ((best[k] - w).max(lo), (best[k] + w).min(hi));
            let eval = |x: f64| {
                let mut t = best.clone();
                t[k] = x;
                rate_or_one(&prob, &t, opts.fine_eps)
            };
            let mut c = b - INV_PHI * (b - a);
            let mut d = a + INV_PHI * (b - a);
            let (mut fc, mut fd) = (eval(c), eval(d));
            while b - a > 1e-4 * (hi - lo) {
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - INV_PHI * (b - a);
                    fc = eval(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + INV_PHI * (b - a);
                    fd = eval(d);
                }
            }
            let (x, fx) = if fc <= fd { (c, fc) } else { (d, fd) };
            if fx < best_rho {
                best[k] = x;
                best_rho = fx;
            }
        }
    }
    (best, best_rho)
}

/// Moment relaxation, candidate extraction, polish and re-certification.
///
/// The order starts at `opts.order` (or the smallest admissible one) and is
/// raised up to `opts.max_order` while the relaxation is infeasible, yields
/// no candidate, or leaves a sandwich gap above `opts.gap_tol`.
pub fn design_sos(spec: &DesignSpec, opts: &DesignOptions) -> Result<DesignResult, DesignError> {
    let rp = relaxation_problem(spec, opts.scalarization)?;
    let prob = spec.problem();
    let start = opts.order.unwrap_or_else(|| min_order(&rp.objective, &rp.constraints, &rp.matrix_constraints));
    let last = opts.max_order.max(start);
    let solver = SolverOptions { max_iter: 300, ..SolverOptions::default() };

    let mut attempts = Vec::new();
    let mut lower: Option<(f64, u32, f64)> = None;
    let mut best: Option<(Vec<f64>, AnalysisResult, Vec<f64>, Option<f64>)> = None;
    let mut any_solved = false;
    let mut last_err: Option<SosError> = None;
    for order in start..=last {
        let res = match lower_bound_general(&rp.objective, &rp.constraints, &rp.matrix_constraints, order, &solver) {
            Ok(r) => r,
            Err(e) => {
                attempts.push(OrderAttempt {
                    order,
                    rho_lower_bound: None,
                    candidate: None,
                    rho_candidate: None,
                    note: Some(e.to_string()),
                });
                last_err = Some(e);
                continue;
            }
        };
        any_solved = true;
        // every relaxation variable lies in [−1, 1] on the feasible set, so
        // the ℓ₁ norm of the identity residual bounds its effect on γ
        let gamma = (res.gamma - res.identity_residual_l1).clamp(0.0, 1.0);
        let lb = gamma.sqrt();
        if lower.is_none_or(|(l, _, _)| lb > l) {
            lower = Some((lb, order, gamma));
        }
        let names: Vec<&str> = rp.theta_vars.iter().map(|s| s.as_str()).collect();
        let units = if names.is_empty() { Ok(Vec::new()) } else { moment_candidate(&res, Some(&names)) };
        let units = match units {
            Ok(u) => u,
            Err(e) => {
                attempts.push(OrderAttempt {
                    order,
                    rho_lower_bound: Some(lb),
                    candidate: None,
                    rho_candidate: None,
                    note: Some(e.to_string()),
                });
                continue;
            }
        };
        let raw = theta_from_units(spec, &rp.free, &units);
        let raw_rho = certify_rate(&prob, &raw, opts.fine_eps).ok().map(|r| r.rho_star);
        let (theta, _) = if opts.polish { polish(spec, opts, &rp.free, raw.clone()) } else { (raw.clone(), 0.0) };
        attempts.push(OrderAttempt {
            order,
            rho_lower_bound: Some(lb),
            candidate: Some(raw.clone()),
            rho_candidate: raw_rho,
            note: None,
        });
        let analysis = match certify_rate(&prob, &theta, opts.fine_eps) {
            Ok(a) => a,
            Err(AnalysisError::NeverFeasible) | Err(AnalysisError::Solver { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        if best.as_ref().is_none_or(|b| analysis.rho_star < b.1.rho_star) {
            best = Some((theta, analysis, raw, raw_rho));
        }
        let gap = best.as_ref().unwrap().1.rho_star - lower.unwrap().0;
        if gap <= opts.gap_tol {
            break;
        }
    }

    let Some((theta, analysis, raw, raw_rho)) = best else {
        return match (lower, last_err) {
            (Some((lb, o, _)), _) => Err(DesignError::ExtractionFailed { rho_lower_bound: lb, order: o }),
            (None, Some(SosError::Infeasible(_))) if !any_solved => Err(DesignError::RelaxationInfeasible(last)),
            (None, Some(e)) => Err(e.into()),
            (None, None) => Err(DesignError::RelaxationInfeasible(last)),
        };
    };
    let (lb, order, gamma) = lower.unwrap_or((0.0, last, 0.0));
    let mut out = finish(spec, opts, "sos", theta, analysis);
    out.rho_lower_bound = Some(lb);
    out.gap = Some(out.rho_certified - lb);
    let mut variables = vec!["rho2".to_string()];
    variables.extend(rp.theta_vars.iter().cloned());
    variables.extend(rp.neg_m.vars().into_iter().filter(|v| v != "rho2" && !rp.theta_vars.contains(v)));
    out.relaxation = Some(RelaxationReport {
        scalarization: opts.scalarization,
        order,
        variables,
        gamma,
        candidate: raw,
        rho_candidate: raw_rho,
        attempts,
    });
    Ok(out)
}

/// Re-certifies a candidate inside Θ and attaches an empirical check.
pub fn verify_design(
    spec: &DesignSpec,
    theta: &[f64],
    opts: &DesignOptions,
) -> Result<(AnalysisResult, VerificationReport), DesignError> {
    spec.validate()?;
    if !spec.contains(theta) {
        return Err(DesignError::Precondition(format!("θ = {theta:?} lies outside the design box")));
    }
    let prob = spec.problem();
    let analysis = certify_rate(&prob, theta, opts.fine_eps)?;
    let report = verify_certificate_seeded(&prob, theta, &analysis.certificate, opts.verify_trials, opts.seed);
    Ok((analysis, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_family;

    fn spec(name: &str, kappa: f64) -> DesignSpec {
        DesignSpec::new(builtin_family(name).unwrap(), FunctionClass::from_kappa(kappa).unwrap())
    }

    #[test]
    fn grid_points_order_and_degenerate_axes() {
        let s = spec("nesterov", 10.0).freeze("h", 0.1).unwrap();
        let pts = grid_points(&s, 3).unwrap();
        assert_eq!(pts, vec![vec![0.1, 0.0], vec![0.1, 0.5], vec![0.1, 1.0]]);
        let s = spec("nesterov", 10.0);
        assert_eq!(grid_points(&s, 4).unwrap().len(), 16);
        assert!(grid_points(&s, 1000).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(spec("gradient", 10.0).with_box("h", 0.3, 0.1).unwrap().validate().is_err());
        assert!(spec("gradient", 10.0).freeze("h", 5.0).unwrap().validate().is_err());
        assert!(spec("gradient", 10.0).freeze("beta", 0.1).is_err());
        assert!(spec("nesterov", 10.0).validate().is_ok());
    }

    #[test]
    fn grid_gradient_finds_two_over_m_plus_l() {
        let s = spec("gradient", 10.0);
        let opts = DesignOptions { resolution: 100, ..Default::default() };
        let r = design_grid(&s, &opts).unwrap();
        let width = 2.0 / 10.0 / 99.0;
        assert!((r.theta_star[0] - 2.0 / 11.0).abs() <= width, "{:?}", r.theta_star);
        assert!((r.rho_certified - 9.0 / 11.0).abs() < 5e-3, "{}", r.rho_certified);
        let table = r.sweep_table.unwrap();
        assert_eq!(table.len(), 100);
        // h = 0 cannot contract
        assert!(!table[0].feasible);
        let v = r.verification.unwrap();
        assert!(v.passed, "{v:?} {:?}", r.analysis.certificate);
    }

    #[test]
    fn grid_degenerate_box_is_a_single_point() {
        let s = spec("gradient", 10.0).with_box("h", 0.1, 0.1).unwrap();
        let r = design_grid(&s, &DesignOptions::default()).unwrap();
        assert_eq!(r.sweep_table.as_ref().unwrap().len(), 1);
        assert!((r.rho_certified - 0.9).abs() < 1e-3);
    }

    #[test]
    fn grid_all_infeasible() {
        let s = spec("gradient", 10.0).with_box("h", 0.25, 0.3).unwrap();
        let opts = DesignOptions { resolution: 5, ..Default::default() };
        assert_eq!(design_grid(&s, &opts).unwrap_err(), DesignError::AllInfeasible);
    }

    #[test]
    fn grid_is_deterministic() {
        let s = spec("heavy_ball", 5.0);
        let opts = DesignOptions { resolution: 8, ..Default::default() };
        let a = design_grid(&s, &opts).unwrap();
        let b = design_grid(&s, &opts).unwrap();
        assert_eq!(a.theta_star, b.theta_star);
        assert_eq!(a.sweep_table, b.sweep_table);
    }

    #[test]
    fn relaxation_problem_matches_numeric_lmi() {
        // evaluate the relaxation's −M at a point and compare to the numeric build
        let kappa = 10.0;
        let s = spec("nesterov", kappa).freeze("h", 0.1).unwrap();
        let rp = relaxation_problem(&s, Scalarization::SosMatrix).unwrap();
        assert_eq!(rp.theta_vars, vec!["u_beta".to_string()]);
        let (rho2, beta, mu, p11, p12, p22) = (0.7, 0.4, 0.2, 0.3, -0.1, 0.25);
        let val = rp
            .neg_m
            .evaluate(&[("rho2", rho2), ("u_beta", beta), ("lambda", mu), ("p11", p11), ("p12", p12), ("p22", p22)])
            .unwrap();
        let sw = 1.0 - mu - p11 - p22;
        let pm = crate::linalg::SymMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => p11 / sw,
            (1, 1) => p22 / sw,
            _ => p12 / sw,
        });
        let prob = s.problem();
        let m = crate::certificate::build_numeric(&prob, &[0.1, beta], rho2, mu / (1.0 + kappa) / sw, &pm).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((val.get(i, j) + sw * m.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_det_needs_two_by_two() {
        let s = spec("nesterov", 10.0).freeze("h", 0.1).unwrap();
        assert!(matches!(relaxation_problem(&s, Scalarization::TraceDet), Err(DesignError::Unsupported(_))));
        let g = spec("gradient", 10.0);
        let rp = relaxation_problem(&g, Scalarization::TraceDet).unwrap();
        assert!(rp.matrix_constraints.is_empty());
    }

    #[test]
    fn verify_design_checks_box() {
        let s = spec("gradient", 10.0);
        let opts = DesignOptions::default();
        assert!(matches!(verify_design(&s, &[0.5], &opts), Err(DesignError::Precondition(_))));
        let (a, rep) = verify_design(&s, &[0.1], &opts).unwrap();
        assert!((a.rho_star - 0.9).abs() < 1e-3 && rep.passed);
        let wide = spec("gradient", 10.0).with_box("h", 0.0, 0.5).unwrap();
        assert_eq!(
            verify_design(&wide, &[0.3], &opts).unwrap_err(),
            DesignError::Analysis(AnalysisError::NeverFeasible)
        );
    }

    #[test]
    fn registry() {
        let r = DesignerRegistry::with_builtins();
        assert_eq!(r.names(), vec!["both", "grid", "sos"]);
        assert!(r.get("annealing").is_none());
        assert_eq!("sos".parse::<Method>().unwrap(), Method::Sos);
        assert_eq!("trace-det".parse::<Scalarization>().unwrap(), Scalarization::TraceDet);
    }
}
