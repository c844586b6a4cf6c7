//! Small dense semidefinite programs.
//!
//! Primal form:
//!
//! ```text
//! minimize    <C, X> + c_u' u
//! subject to  <A_i, X> + (F u)_i = b_i,   X = diag(X_1, ..., X_k) ⪰ 0
//! ```
//!
//! with `u` a vector of free scalars. The dual is
//! `maximize b'y  s.t.  C - sum_i y_i A_i = Z ⪰ 0,  F'y = c_u`.
//!
//! Matrices are given by their upper-triangle entries: an entry `(i, j, v)`
//! with `i != j` stands for `v` at both `(i, j)` and `(j, i)`.

mod sdpa;
mod solver;

pub use sdpa::{read_sdpa, write_sdpa};
pub use solver::{feasibility_margin, solve, MarginResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("SDPA parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    fn new(block: usize, i: usize, j: usize, value: f64) -> Self {
        let (row, col) = if i <= j { (i, j) } else { (j, i) };
        Entry { block, row, col, value }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpConstraint {
    pub entries: Vec<Entry>,
    /// `(free variable index, coefficient)`.
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub objective: Vec<Entry>,
    pub free_cost: Vec<f64>,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<usize>) -> Self {
        SdpProblem { blocks, ..Default::default() }
    }

    pub fn add_block(&mut self, size: usize) -> usize {
        self.blocks.push(size);
        self.blocks.len() - 1
    }

    /// Adds a free scalar with the given objective cost; returns its index.
    pub fn add_free(&mut self, cost: f64) -> usize {
        self.free_cost.push(cost);
        self.free_cost.len() - 1
    }

    pub fn num_free(&self) -> usize {
        self.free_cost.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add_objective(&mut self, block: usize, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.objective.push(Entry::new(block, i, j, v));
        }
    }

    /// Starts a new equality constraint with right-hand side `rhs`.
    pub fn add_constraint(&mut self, rhs: f64) -> usize {
        self.constraints.push(SdpConstraint { rhs, ..Default::default() });
        self.constraints.len() - 1
    }

    pub fn add_entry(&mut self, con: usize, block: usize, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.constraints[con].entries.push(Entry::new(block, i, j, v));
        }
    }

    pub fn add_free_coeff(&mut self, con: usize, var: usize, v: f64) {
        if v != 0.0 {
            self.constraints[con].free.push((var, v));
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |e: &Entry| -> Result<(), SdpError> {
            let n = *self
                .blocks
                .get(e.block)
                .ok_or_else(|| SdpError::Malformed(format!("block {} does not exist", e.block)))?;
            if e.col >= n {
                return Err(SdpError::Malformed(format!(
                    "entry ({}, {}) outside block {} of size {n}",
                    e.row, e.col, e.block
                )));
            }
            if !e.value.is_finite() {
                return Err(SdpError::Malformed("non-finite coefficient".into()));
            }
            Ok(())
        };
        if self.blocks.contains(&0) {
            return Err(SdpError::Malformed("empty block".into()));
        }
        self.objective.iter().try_for_each(check)?;
        for c in &self.constraints {
            c.entries.iter().try_for_each(check)?;
            if !c.rhs.is_finite() {
                return Err(SdpError::Malformed("non-finite right-hand side".into()));
            }
            if c.free.iter().any(|&(k, v)| k >= self.num_free() || !v.is_finite()) {
                return Err(SdpError::Malformed("bad free-variable coefficient".into()));
            }
        }
        if self.free_cost.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Malformed("non-finite free cost".into()));
        }
        Ok(())
    }

    fn inner(entries: &[Entry], x: &[SymMatrix]) -> f64 {
        entries
            .iter()
            .map(|e| {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                w * e.value * x[e.block].get(e.row, e.col)
            })
            .sum()
    }

    /// `<A_i, X> + (F u)_i`.
    pub fn constraint_value(&self, i: usize, x: &[SymMatrix], u: &[f64]) -> f64 {
        let c = &self.constraints[i];
        Self::inner(&c.entries, x) + c.free.iter().map(|&(k, v)| v * u[k]).sum::<f64>()
    }

    pub fn objective_value(&self, x: &[SymMatrix], u: &[f64]) -> f64 {
        Self::inner(&self.objective, x) + self.free_cost.iter().zip(u).map(|(c, v)| c * v).sum::<f64>()
    }

    /// `C - sum_i y_i A_i`, block by block.
    pub fn dual_slack(&self, y: &[f64]) -> Vec<SymMatrix> {
        let mut z: Vec<SymMatrix> = self.blocks.iter().map(|&n| SymMatrix::zeros(n)).collect();
        let mut add = |e: &Entry, w: f64| {
            let v = z[e.block].get(e.row, e.col) + w * e.value;
            z[e.block].set(e.row, e.col, v);
        };
        for e in &self.objective {
            add(e, 1.0);
        }
        for (c, &yi) in self.constraints.iter().zip(y) {
            for e in &c.entries {
                add(e, -yi);
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    /// The primal is infeasible; `y` holds a Farkas ray with `b'y = 1`,
    /// `sum y_i A_i ⪯ 0` and `F'y = 0`.
    Infeasible,
    /// The primal is unbounded below; `x`, `free` hold an improving ray.
    Unbounded,
    IterLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<SymMatrix>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<SymMatrix>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub step_factor: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { feas_tol: 1e-8, gap_tol: 1e-8, max_iter: 200, step_factor: 0.99, verbose: false }
    }
}
