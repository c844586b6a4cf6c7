use serde::{Deserialize, Serialize};

use super::{AlgorithmFamily, ModelError, Objective};
use crate::linalg::SymMatrix;

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// States are stored block-major: block `i` of `ξ_k` is
/// `states[k][i*d..(i+1)*d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub states: Vec<Vec<f64>>,
    pub outputs_y: Vec<Vec<f64>>,
    pub outputs_x: Vec<Vec<f64>>,
    pub objective_gaps: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `Σ_j row[j] · block_j(ξ)`.
fn combine(row: impl Iterator<Item = f64>, xi: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (j, w) in row.enumerate() {
        if w != 0.0 {
            for (o, v) in out.iter_mut().zip(&xi[j * d..(j + 1) * d]) {
                *o += w * v;
            }
        }
    }
    out
}

/// Runs `K` steps from `ξ₀`, producing `K + 1` states.
pub fn simulate(
    family: &dyn AlgorithmFamily,
    theta: &[f64],
    f: &dyn Objective,
    xi0: &[f64],
    k: usize,
) -> Result<Trajectory, ModelError> {
    let ss = family.matrices(theta)?;
    let n = ss.state_dim();
    let d = f.dim();
    if k == 0 {
        return Err(ModelError::Parameter("iteration count must be at least 1".into()));
    }
    if xi0.len() != n * d {
        return Err(ModelError::Dimension(format!("initial state has length {}, expected {}", xi0.len(), n * d)));
    }
    let f_star = f.min_value();
    let mut traj = Trajectory {
        dim: d,
        states: Vec::with_capacity(k + 1),
        outputs_y: Vec::with_capacity(k + 1),
        outputs_x: Vec::with_capacity(k + 1),
        objective_gaps: Vec::with_capacity(k + 1),
    };
    let mut xi = xi0.to_vec();
    for step in 0..=k {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(ModelError::Divergence { step, norm });
        }
        let y = combine((0..n).map(|j| *ss.c.get(0, j)), &xi, d);
        let x = combine((0..n).map(|j| *ss.e.get(0, j)), &xi, d);
        traj.objective_gaps.push(f.value(&x) - f_star);
        if step < k {
            let g = f.gradient(&y);
            let mut next = vec![0.0; n * d];
            for i in 0..n {
                let blk = combine((0..n).map(|j| *ss.a.get(i, j)), &xi, d);
                let b = *ss.b.get(i, 0);
                for t in 0..d {
                    next[i * d + t] = blk[t] + b * g[t];
                }
            }
            traj.states.push(std::mem::replace(&mut xi, next));
        } else {
            traj.states.push(xi.clone());
        }
        traj.outputs_y.push(y);
        traj.outputs_x.push(x);
    }
    Ok(traj)
}

/// `V_k = f(x_k) − f⋆ + (ξ_k − ξ⋆)ᵀ(P̄ ⊗ I)(ξ_k − ξ⋆)`.
pub fn lyapunov_values(traj: &Trajectory, p: &SymMatrix, fixed_point: &[f64]) -> Result<Vec<f64>, ModelError> {
    let n = p.dim();
    let d = traj.dim;
    if fixed_point.len() != n * d || traj.states.iter().any(|s| s.len() != n * d) {
        return Err(ModelError::Dimension(format!(
            "P is {n}×{n} but states have {} blocks of size {d}",
            fixed_point.len() / d.max(1)
        )));
    }
    Ok(traj
        .states
        .iter()
        .zip(&traj.objective_gaps)
        .map(|(s, gap)| {
            let mut v = *gap;
            for i in 0..n {
                for j in 0..n {
                    let pij = p.get(i, j);
                    if pij == 0.0 {
                        continue;
                    }
                    let dot: f64 = (0..d)
                        .map(|t| (s[i * d + t] - fixed_point[i * d + t]) * (s[j * d + t] - fixed_point[j * d + t]))
                        .sum();
                    v += pij * dot;
                }
            }
            v
        })
        .collect())
}

/// `v ⊗ x⋆` for a reduced fixed point `v`.
pub fn full_fixed_point(v: &[f64], x_star: &[f64]) -> Vec<f64> {
    v.iter().flat_map(|&vi| x_star.iter().map(move |&x| vi * x)).collect()
}
