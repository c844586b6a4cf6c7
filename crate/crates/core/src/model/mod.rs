//! Function classes, algorithm families in reduced state-space form, and
//! trajectory simulation.
//!
//! An algorithm acting on `R^d` is `ξ+ = (Ā⊗I)ξ + (B̄⊗I)∇f(y)`, `y = (C̄⊗I)ξ`,
//! `x = (Ē⊗I)ξ`. Only the reduced matrices are stored.

mod objective;
mod simulate;

pub use objective::{LogSumExp, Objective, Quadratic};
pub use simulate::{full_fixed_point, lyapunov_values, simulate, Trajectory, DIVERGENCE_NORM};

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymMatrix;
use crate::mat::{Mat, Scalar};
use crate::poly::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown algorithm family `{0}`")]
    UnknownFamily(String),
    #[error("invalid function class: need 0 < m_f <= L_f, got m_f = {m}, L_f = {l}")]
    InvalidClass { m: f64, l: f64 },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iterates diverged at step {step} (state norm {norm:e})")]
    Divergence { step: usize, norm: f64 },
    #[error("invalid family definition: {0}")]
    Definition(String),
}

/// `F(m_f, L_f)`: differentiable, `m_f`-strongly convex and `L_f`-smooth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    pub m: f64,
    pub l: f64,
}

impl FunctionClass {
    pub fn new(m: f64, l: f64) -> Result<Self, ModelError> {
        if !(m > 0.0 && l >= m && l.is_finite()) {
            return Err(ModelError::InvalidClass { m, l });
        }
        Ok(FunctionClass { m, l })
    }

    /// `(1, κ)`.
    pub fn from_kappa(kappa: f64) -> Result<Self, ModelError> {
        Self::new(1.0, kappa)
    }

    pub fn condition_number(&self) -> f64 {
        self.l / self.m
    }

    pub fn qf_matrix(&self) -> SymMatrix {
        let (m, l) = (self.m, self.l);
        SymMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => -2.0 * m * l,
            (1, 1) => -2.0,
            _ => m + l,
        })
    }
}

/// Reduced state-space matrices `(Ā, B̄, C̄, Ē)`; `B̄` is n̄×1, `C̄`, `Ē` are 1×n̄.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<R> {
    pub a: Mat<R>,
    pub b: Mat<R>,
    pub c: Mat<R>,
    pub e: Mat<R>,
}

impl<R: Scalar> StateSpace<R> {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn map<S: Scalar>(&self, f: impl Fn(&R) -> S) -> StateSpace<S> {
        StateSpace { a: self.a.map(&f), b: self.b.map(&f), c: self.c.map(&f), e: self.e.map(&f) }
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let n = self.a.rows();
        let ok = self.a.cols() == n
            && (self.b.rows(), self.b.cols()) == (n, 1)
            && (self.c.rows(), self.c.cols()) == (1, n)
            && (self.e.rows(), self.e.cols()) == (1, n);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Dimension("state-space matrices have inconsistent shapes".into()))
        }
    }
}

impl StateSpace<f64> {
    /// Reduced fixed point `v` with `Āv = v`, `C̄v = Ēv = 1`; the full fixed
    /// point for a minimizer `x⋆` is `v ⊗ x⋆`.
    pub fn fixed_point(&self) -> Result<Vec<f64>, ModelError> {
        let n = self.state_dim();
        let mut sys = DMatrix::zeros(n + 2, n);
        let mut rhs = nalgebra::DVector::zeros(n + 2);
        for i in 0..n {
            for j in 0..n {
                sys[(i, j)] = self.a.get(i, j) - if i == j { 1.0 } else { 0.0 };
            }
            sys[(n, i)] = self.c.get(0, i) - self.e.get(0, i);
            sys[(n + 1, i)] = *self.e.get(0, i);
        }
        rhs[n + 1] = 1.0;
        let svd = sys.clone().svd(true, true);
        let v = svd.solve(&rhs, 1e-12).map_err(|e| ModelError::Parameter(format!("fixed point: {e}")))?;
        let res = (&sys * &v - &rhs).amax();
        if res > 1e-9 {
            return Err(ModelError::Parameter(format!("no consistent fixed point (residual {res:e})")));
        }
        Ok(v.iter().copied().collect())
    }
}

/// A parameterized first-order method.
pub trait AlgorithmFamily: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Components of θ, in order.
    fn param_names(&self) -> &[String];

    /// Number of d-dimensional state blocks.
    fn state_dim(&self) -> usize;

    fn matrices(&self, theta: &[f64]) -> Result<StateSpace<f64>, ModelError>;

    /// The matrices with entries polynomial in the parameter names; `None` if
    /// the family is only available numerically.
    fn symbolic(&self) -> Option<StateSpace<Polynomial>>;

    /// Default parameter box: `h ∈ [0, 2/L_f]`, everything else in `[0, 1]`.
    fn default_box(&self, fc: &FunctionClass) -> Vec<(f64, f64)> {
        self.param_names().iter().map(|p| if p == "h" { (0.0, 2.0 / fc.l) } else { (0.0, 1.0) }).collect()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.param_names().len() {
            return Err(ModelError::ParamCount { expected: self.param_names().len(), got: theta.len() });
        }
        if let Some(k) = theta.iter().position(|t| !t.is_finite()) {
            return Err(ModelError::Parameter(format!("{} is not finite", self.param_names()[k])));
        }
        Ok(())
    }

    /// Parses `name=value` pairs into θ; every parameter must be given.
    fn parse_theta(&self, pairs: &[(String, f64)]) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(self.param_names().len());
        for name in self.param_names() {
            let v = pairs
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| ModelError::Parameter(format!("missing value for `{name}`")))?;
            out.push(v);
        }
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !self.param_names().contains(k)) {
            return Err(ModelError::Parameter(format!("`{k}` is not a parameter of {}", self.name())));
        }
        Ok(out)
    }
}

fn mat<R: Scalar>(rows: Vec<Vec<R>>) -> Mat<R> {
    Mat::from_rows(rows)
}

fn gradient_matrices<R: Scalar>(h: R) -> StateSpace<R> {
    StateSpace {
        a: mat(vec![vec![R::one()]]),
        b: mat(vec![vec![h.neg()]]),
        c: mat(vec![vec![R::one()]]),
        e: mat(vec![vec![R::one()]]),
    }
}

/// `x+ = x + β(x − x₋) − h∇f(y)`, `y = x + γ(x − x₋)`, state `(x₋, x)`.
fn general_matrices<R: Scalar>(h: R, beta: R, gamma: R) -> StateSpace<R> {
    StateSpace {
        a: mat(vec![vec![R::zero(), R::one()], vec![beta.neg(), beta.add(&R::one())]]),
        b: mat(vec![vec![R::zero()], vec![h.neg()]]),
        c: mat(vec![vec![gamma.neg(), gamma.add(&R::one())]]),
        e: mat(vec![vec![R::zero(), R::one()]]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BuiltinKind {
    Gradient,
    HeavyBall,
    Nesterov,
    General,
}

/// The shipped families.
///
/// `heavy_ball` takes `(h, gamma)` with `gamma` the momentum weight in the
/// state update and the gradient evaluated at `y = x`. This follows the
/// labelling of the usual rate table (`γ = ((√κ−1)/(√κ+1))², β = 0`), which
/// swaps the roles of β and γ relative to the three-parameter recursion; in
/// terms of that recursion it is `(h, β := gamma, γ := 0)`.
#[derive(Debug, Clone)]
pub struct BuiltinFamily {
    kind: BuiltinKind,
    name: String,
    params: Vec<String>,
}

impl BuiltinFamily {
    fn new(kind: BuiltinKind) -> Self {
        let (name, params): (&str, &[&str]) = match kind {
            BuiltinKind::Gradient => ("gradient", &["h"]),
            BuiltinKind::HeavyBall => ("heavy_ball", &["h", "gamma"]),
            BuiltinKind::Nesterov => ("nesterov", &["h", "beta"]),
            BuiltinKind::General => ("general_three_param", &["h", "beta", "gamma"]),
        };
        BuiltinFamily { kind, name: name.into(), params: params.iter().map(|s| s.to_string()).collect() }
    }

    fn build<R: Scalar>(&self, t: &[R]) -> StateSpace<R> {
        match self.kind {
            BuiltinKind::Gradient => gradient_matrices(t[0].clone()),
            BuiltinKind::HeavyBall => general_matrices(t[0].clone(), t[1].clone(), R::zero()),
            BuiltinKind::Nesterov => general_matrices(t[0].clone(), t[1].clone(), t[1].clone()),
            BuiltinKind::General => general_matrices(t[0].clone(), t[1].clone(), t[2].clone()),
        }
    }
}

impl AlgorithmFamily for BuiltinFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn param_names(&self) -> &[String] {
        &self.params
    }

    fn state_dim(&self) -> usize {
        if self.kind == BuiltinKind::Gradient {
            1
        } else {
            2
        }
    }

    fn matrices(&self, theta: &[f64]) -> Result<StateSpace<f64>, ModelError> {
        self.check_theta(theta)?;
        Ok(self.build(theta))
    }

    fn symbolic(&self) -> Option<StateSpace<Polynomial>> {
        let vars: Vec<Polynomial> = self.params.iter().map(|p| Polynomial::var(p)).collect();
        Some(self.build(&vars))
    }
}

pub const BUILTIN_FAMILIES: [&str; 4] = ["gradient", "heavy_ball", "nesterov", "general_three_param"];

pub fn builtin_family(kind: &str) -> Result<Arc<dyn AlgorithmFamily>, ModelError> {
    let k = match kind {
        "gradient" => BuiltinKind::Gradient,
        "heavy_ball" => BuiltinKind::HeavyBall,
        "nesterov" => BuiltinKind::Nesterov,
        "general_three_param" | "general" => BuiltinKind::General,
        _ => return Err(ModelError::UnknownFamily(kind.to_string())),
    };
    Ok(Arc::new(BuiltinFamily::new(k)))
}

/// Serialized family: matrix entries are polynomials in the parameter names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDefinition {
    pub name: String,
    pub params: Vec<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Polynomial>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Polynomial>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<Polynomial>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<Polynomial>>,
}

impl FamilyDefinition {
    pub fn from_family(f: &dyn AlgorithmFamily) -> Option<Self> {
        let s = f.symbolic()?;
        let rows = |m: &Mat<Polynomial>| -> Vec<Vec<Polynomial>> {
            (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j).clone()).collect()).collect()
        };
        Some(FamilyDefinition {
            name: f.name().to_string(),
            params: f.param_names().to_vec(),
            a: rows(&s.a),
            b: rows(&s.b),
            c: rows(&s.c),
            e: rows(&s.e),
        })
    }
}

/// A family given by polynomial matrix entries, e.g. loaded from JSON.
#[derive(Debug, Clone)]
pub struct PolynomialFamily {
    name: String,
    params: Vec<String>,
    matrices: StateSpace<Polynomial>,
}

impl PolynomialFamily {
    pub fn new(def: FamilyDefinition) -> Result<Self, ModelError> {
        let to_mat = |rows: &[Vec<Polynomial>], what: &str| -> Result<Mat<Polynomial>, ModelError> {
            let w = rows.first().map_or(0, |r| r.len());
            if rows.is_empty() || rows.iter().any(|r| r.len() != w) {
                return Err(ModelError::Definition(format!("{what} is not a rectangular matrix")));
            }
            Ok(Mat::from_rows(rows.to_vec()))
        };
        let ss = StateSpace {
            a: to_mat(&def.a, "A")?,
            b: to_mat(&def.b, "B")?,
            c: to_mat(&def.c, "C")?,
            e: to_mat(&def.e, "E")?,
        };
        ss.check_shapes().map_err(|e| ModelError::Definition(e.to_string()))?;
        for m in [&ss.a, &ss.b, &ss.c, &ss.e] {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if let Some(v) = m.get(i, j).used_vars().into_iter().find(|v| !def.params.contains(v)) {
                        return Err(ModelError::Definition(format!("entry uses undeclared parameter `{v}`")));
                    }
                }
            }
        }
        Ok(PolynomialFamily { name: def.name, params: def.params, matrices: ss })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let def: FamilyDefinition = serde_json::from_str(text).map_err(|e| ModelError::Definition(e.to_string()))?;
        Self::new(def)
    }
}

impl AlgorithmFamily for PolynomialFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn param_names(&self) -> &[String] {
        &self.params
    }

    fn state_dim(&self) -> usize {
        self.matrices.state_dim()
    }

    fn matrices(&self, theta: &[f64]) -> Result<StateSpace<f64>, ModelError> {
        self.check_theta(theta)?;
        let point: Vec<(&str, f64)> = self.params.iter().map(|s| s.as_str()).zip(theta.iter().copied()).collect();
        let eval = |m: &Mat<Polynomial>| -> Result<Mat<f64>, ModelError> {
            let mut out = Mat::zeros(m.rows(), m.cols());
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let v = m
                        .get(i, j)
                        .evaluate(point.iter().copied())
                        .map_err(|e| ModelError::Parameter(e.to_string()))?;
                    out.set(i, j, v);
                }
            }
            Ok(out)
        };
        Ok(StateSpace {
            a: eval(&self.matrices.a)?,
            b: eval(&self.matrices.b)?,
            c: eval(&self.matrices.c)?,
            e: eval(&self.matrices.e)?,
        })
    }

    fn symbolic(&self) -> Option<StateSpace<Polynomial>> {
        Some(self.matrices.clone())
    }
}

/// Name-keyed collection of families.
#[derive(Debug, Clone, Default)]
pub struct FamilyRegistry {
    families: BTreeMap<String, Arc<dyn AlgorithmFamily>>,
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        for name in BUILTIN_FAMILIES {
            r.register(builtin_family(name).expect("builtin"));
        }
        r
    }

    /// Adds or replaces a family under its own name.
    pub fn register(&mut self, f: Arc<dyn AlgorithmFamily>) {
        self.families.insert(f.name().to_string(), f);
    }

    pub fn register_json(&mut self, text: &str) -> Result<Arc<dyn AlgorithmFamily>, ModelError> {
        let f: Arc<dyn AlgorithmFamily> = Arc::new(PolynomialFamily::from_json(text)?);
        self.register(f.clone());
        Ok(f)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AlgorithmFamily>, ModelError> {
        let key = if name == "general" { "general_three_param" } else { name };
        self.families.get(key).cloned().ok_or_else(|| ModelError::UnknownFamily(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.families.keys().map(|s| s.as_str()).collect()
    }
}
