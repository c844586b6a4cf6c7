//! Sparse multivariate polynomials over named indeterminates.
//!
//! A [`Polynomial`] carries its own ordered variable list; binary operations
//! between polynomials over different variable lists first extend both to
//! the union (left operand's variables first). Terms are kept in a
//! `BTreeMap` keyed by [`Monomial`], whose ordering is graded-lexicographic.

mod matrix;
mod text;

pub use matrix::{determinant, principal_index_sets, MinorSelection, PolyMatrix, MAX_MINOR_DIM};
pub use text::ParseError;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use smallvec::SmallVec;
use thiserror::Error;

use crate::mat::Scalar;

/// Coefficients with magnitude at or below this are dropped after arithmetic.
pub const CLEANUP_THRESHOLD: f64 = 1e-14;

/// Largest total degree any stored term may have.
pub const MAX_DEGREE: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("no value supplied for indeterminate `{0}`")]
    MissingVariable(String),
    #[error("matrix of size {0} exceeds the supported maximum of {1}")]
    Size(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Exponent vector in graded-lexicographic order.
///
/// Total degree is compared first; ties are broken lexicographically, with a
/// larger exponent on an earlier variable ranking higher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Monomial(pub SmallVec<[u8; 8]>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(SmallVec::from_elem(0, nvars))
    }

    pub fn var(nvars: usize, idx: usize) -> Self {
        let mut m = Self::one(nvars);
        m.0[idx] = 1;
        m
    }

    pub fn from_exponents(exps: &[u8]) -> Self {
        Monomial(SmallVec::from_slice(exps))
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exponents(&self) -> &[u8] {
        &self.0
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Monomial(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).filter(|(&e, _)| e > 0).map(|(&e, &v)| v.powi(e as i32)).product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `nvars` variables of total degree at most `degree`,
/// ascending in graded order with the constant monomial first.
pub fn monomial_basis(nvars: usize, degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut level = Vec::new();
        let mut cur: SmallVec<[u8; 8]> = SmallVec::from_elem(0, nvars);
        fill_degree(&mut level, &mut cur, 0, d);
        // within one degree: x1^d first (reverse of graded-lex)
        level.sort_by(|a: &Monomial, b| b.cmp(a));
        out.extend(level);
    }
    out
}

fn fill_degree(out: &mut Vec<Monomial>, cur: &mut SmallVec<[u8; 8]>, pos: usize, left: u32) {
    if cur.is_empty() {
        if left == 0 {
            out.push(Monomial(cur.clone()));
        }
        return;
    }
    if pos == cur.len() - 1 {
        cur[pos] = left as u8;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in 0..=left {
        cur[pos] = e as u8;
        fill_degree(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone, Default)]
pub struct Polynomial {
    vars: Vec<String>,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        if c != 0.0 {
            p.terms.insert(Monomial::one(0), c);
        }
        p
    }

    pub fn var(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial::var(1, 0), 1.0);
        Polynomial { vars: vec![name.to_string()], terms }
    }

    /// Builds from explicit terms over `vars`; zero coefficients are skipped
    /// and repeated monomials accumulate.
    pub fn from_terms<I>(vars: Vec<String>, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial { vars, terms: BTreeMap::new() };
        for (m, c) in terms {
            assert_eq!(m.len(), p.vars.len(), "exponent vector length must match the variable count");
            assert!(m.degree() <= MAX_DEGREE, "total degree {} exceeds cap {MAX_DEGREE}", m.degree());
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.cleanup();
        p
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Terms in descending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().rev().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, var: &str) -> u32 {
        match self.var_index(var) {
            Some(i) => self.terms.keys().map(|m| m.0[i] as u32).max().unwrap_or(0),
            None => 0,
        }
    }

    pub fn var_index(&self, var: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }

    /// Variables that actually occur with a nonzero exponent.
    pub fn used_vars(&self) -> Vec<String> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(i, _)| self.terms.keys().any(|m| m.0[*i] > 0))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn constant_term(&self) -> f64 {
        self.terms.get(&Monomial::one(self.vars.len())).copied().unwrap_or(0.0)
    }

    /// Coefficient of the monomial `prod var^exp`; unnamed variables have
    /// exponent zero.
    pub fn coefficient(&self, powers: &[(&str, u8)]) -> f64 {
        let mut m = Monomial::one(self.vars.len());
        for &(name, e) in powers {
            match self.var_index(name) {
                Some(i) => m.0[i] = e,
                None if e == 0 => {}
                None => return 0.0,
            }
        }
        self.terms.get(&m).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Re-expresses over `vars`, which must contain every used variable.
    pub fn align(&self, vars: &[String]) -> Polynomial {
        let map: Vec<usize> = self
            .vars
            .iter()
            .map(|v| vars.iter().position(|w| w == v))
            .enumerate()
            .map(|(i, pos)| match pos {
                Some(p) => p,
                None => {
                    assert!(
                        self.terms.keys().all(|m| m.0[i] == 0),
                        "variable `{}` is used but missing from the target variable list",
                        self.vars[i]
                    );
                    usize::MAX
                }
            })
            .collect();
        let terms = self.terms.iter().map(|(m, &c)| {
            let mut e = Monomial::one(vars.len());
            for (i, &k) in m.0.iter().enumerate() {
                if k > 0 {
                    e.0[map[i]] = k;
                }
            }
            (e, c)
        });
        Polynomial { vars: vars.to_vec(), terms: terms.collect() }
    }

    pub(crate) fn union_vars(a: &[String], b: &[String]) -> Vec<String> {
        let mut out = a.to_vec();
        for v in b {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        out
    }

    fn cleanup(&mut self) {
        self.terms.retain(|_, c| c.abs() > CLEANUP_THRESHOLD);
    }

    pub fn scale(&self, a: f64) -> Polynomial {
        let mut p = Polynomial {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), a * c)).collect(),
        };
        p.cleanup();
        p
    }

    pub fn add_poly(&self, other: &Polynomial) -> Polynomial {
        let (mut a, b) = self.aligned_pair(other);
        for (m, c) in b.terms {
            *a.terms.entry(m).or_insert(0.0) += c;
        }
        a.cleanup();
        a
    }

    pub fn sub_poly(&self, other: &Polynomial) -> Polynomial {
        self.add_poly(&other.scale(-1.0))
    }

    pub fn mul_poly(&self, other: &Polynomial) -> Polynomial {
        let (a, b) = self.aligned_pair(other);
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, &ca) in &a.terms {
            for (mb, &cb) in &b.terms {
                let m = ma.mul(mb);
                assert!(m.degree() <= MAX_DEGREE, "total degree {} exceeds cap {MAX_DEGREE}", m.degree());
                *terms.entry(m).or_insert(0.0) += ca * cb;
            }
        }
        let mut p = Polynomial { vars: a.vars, terms };
        p.cleanup();
        p
    }

    pub fn pow(&self, n: u32) -> Polynomial {
        let mut acc = Polynomial::constant(1.0);
        for _ in 0..n {
            acc = acc.mul_poly(self);
        }
        acc
    }

    fn aligned_pair(&self, other: &Polynomial) -> (Polynomial, Polynomial) {
        if self.vars == other.vars {
            return (self.clone(), other.clone());
        }
        let vars = Self::union_vars(&self.vars, &other.vars);
        (self.align(&vars), other.align(&vars))
    }

    /// Replaces `var` by `value` everywhere.
    pub fn substitute(&self, var: &str, value: &Polynomial) -> Polynomial {
        let Some(idx) = self.var_index(var) else {
            return self.clone();
        };
        let max_e = self.degree_in(var);
        let mut powers = vec![Polynomial::constant(1.0)];
        for k in 1..=max_e {
            powers.push(powers[k as usize - 1].mul_poly(value));
        }
        let mut out = Polynomial::zero();
        for (m, &c) in &self.terms {
            let mut rest = m.clone();
            let e = rest.0[idx];
            rest.0[idx] = 0;
            let mono = Polynomial { vars: self.vars.clone(), terms: BTreeMap::from([(rest, c)]) };
            out = out.add_poly(&mono.mul_poly(&powers[e as usize]));
        }
        out.drop_var(var)
    }

    /// Removes `var` from the variable list if no term uses it.
    fn drop_var(&self, var: &str) -> Polynomial {
        let Some(idx) = self.var_index(var) else {
            return self.clone();
        };
        if self.terms.keys().any(|m| m.0[idx] > 0) {
            return self.clone();
        }
        let vars: Vec<String> = self.vars.iter().filter(|v| *v != var).cloned().collect();
        self.align(&vars)
    }

    /// Substitutes several variables by constants at once.
    pub fn partial_eval(&self, values: &[(&str, f64)]) -> Polynomial {
        let mut p = self.clone();
        for &(v, x) in values {
            p = p.substitute(v, &Polynomial::constant(x));
        }
        p
    }

    /// Evaluates with values supplied in the order of `self.vars()`.
    pub fn eval_slice(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.vars.len());
        self.terms.iter().map(|(m, &c)| c * m.eval(values)).sum()
    }

    /// Evaluates at a named point; every used variable must be present.
    pub fn evaluate<'a, I>(&self, point: I) -> Result<f64, PolyError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let point: Vec<(&str, f64)> = point.into_iter().collect();
        let mut values = vec![0.0; self.vars.len()];
        for (i, v) in self.vars.iter().enumerate() {
            match point.iter().find(|(n, _)| n == v) {
                Some(&(_, x)) => values[i] = x,
                None if self.terms.keys().all(|m| m.0[i] == 0) => {}
                None => return Err(PolyError::MissingVariable(v.clone())),
            }
        }
        Ok(self.eval_slice(&values))
    }

    /// Equality up to an absolute coefficient tolerance.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        self.sub_poly(other).max_abs_coefficient() <= tol
    }
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = self.aligned_pair(other);
        a.terms == b.terms
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&text::format_polynomial(self))
    }
}

impl std::str::FromStr for Polynomial {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        text::parse_polynomial(s)
    }
}

impl serde::Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$inner(rhs)
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$inner(&rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                (&self).$inner(rhs)
            }
        }
        impl $tr<f64> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: f64) -> Polynomial {
                self.$inner(&Polynomial::constant(rhs))
            }
        }
        impl $tr<f64> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: f64) -> Polynomial {
                (&self).$inner(&Polynomial::constant(rhs))
            }
        }
    };
}

forward_binop!(Add, add, add_poly);
forward_binop!(Sub, sub, sub_poly);
forward_binop!(Mul, mul, mul_poly);

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Scalar for Polynomial {
    fn zero() -> Self {
        Polynomial::zero()
    }
    fn from_f64(v: f64) -> Self {
        Polynomial::constant(v)
    }
    fn add(&self, o: &Self) -> Self {
        self.add_poly(o)
    }
    fn sub(&self, o: &Self) -> Self {
        self.sub_poly(o)
    }
    fn mul(&self, o: &Self) -> Self {
        self.mul_poly(o)
    }
}
