//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! Internally the problem is handled in the cone-LP form
//!
//! ```text
//! minimize c'x  s.t.  G x + s = h,  A x = b,  s ⪰ 0
//! ```
//!
//! which is the *dual* of [`SdpProblem`]: `x` are the constraint multipliers,
//! `G x = sum x_i A_i`, `h = C`, `c = -b`, and the equality block carries the
//! free-variable columns. The cone-LP dual variable `z` is the user's `X`.
//! Search directions use Nesterov-Todd scaling with a Mehrotra corrector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::{KktResiduals, SdpError, SdpProblem, SdpSolution, SdpStatus, SolverOptions};
use crate::linalg::{eigen_decomposition, SymMatrix};

type Blocks = Vec<DMatrix<f64>>;

struct Data {
    m: usize,
    p: usize,
    sizes: Vec<usize>,
    /// Per block: `(constraint index, upper entries (row, col, value))`.
    bcons: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
    c: DVector<f64>,
    h: Blocks,
    /// `p x m`; row `k` holds the coefficients of free variable `k`.
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Row scaling applied to each constraint.
    scale: Vec<f64>,
}

impl Data {
    fn new(prob: &SdpProblem) -> Self {
        let m = prob.num_constraints();
        let p = prob.num_free();
        let sizes = prob.blocks.clone();
        let scale: Vec<f64> = prob
            .constraints
            .iter()
            .map(|c| {
                let mut ss = 0.0;
                for e in &c.entries {
                    let w = if e.row == e.col { 1.0 } else { 2.0 };
                    ss += w * e.value * e.value;
                }
                for &(_, v) in &c.free {
                    ss += v * v;
                }
                if ss > 0.0 {
                    1.0 / ss.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut bcons: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = vec![Vec::new(); sizes.len()];
        let mut a = DMatrix::zeros(p, m);
        for (i, con) in prob.constraints.iter().enumerate() {
            let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); sizes.len()];
            for e in &con.entries {
                per_block[e.block].push((e.row, e.col, e.value * scale[i]));
            }
            for (blk, ents) in per_block.into_iter().enumerate() {
                if !ents.is_empty() {
                    bcons[blk].push((i, ents));
                }
            }
            for &(k, v) in &con.free {
                a[(k, i)] += v * scale[i];
            }
        }
        let c = DVector::from_iterator(m, prob.constraints.iter().zip(&scale).map(|(con, s)| -con.rhs * s));
        let mut h: Blocks = sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for e in &prob.objective {
            h[e.block][(e.row, e.col)] += e.value;
            if e.row != e.col {
                h[e.block][(e.col, e.row)] += e.value;
            }
        }
        let b = DVector::from_column_slice(&prob.free_cost);
        Data { m, p, sizes, bcons, c, h, a, b, scale }
    }

    fn zeros_blocks(&self) -> Blocks {
        self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect()
    }

    fn degree(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn g(&self, x: &DVector<f64>) -> Blocks {
        let mut out = self.zeros_blocks();
        for (blk, cons) in self.bcons.iter().enumerate() {
            let o = &mut out[blk];
            for (i, ents) in cons {
                let xi = x[*i];
                if xi == 0.0 {
                    continue;
                }
                for &(k, l, a) in ents {
                    o[(k, l)] += a * xi;
                    if k != l {
                        o[(l, k)] += a * xi;
                    }
                }
            }
        }
        out
    }

    fn gt(&self, z: &Blocks) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, cons) in self.bcons.iter().enumerate() {
            let zb = &z[blk];
            for (i, ents) in cons {
                let mut acc = 0.0;
                for &(k, l, a) in ents {
                    acc += if k == l { a * zb[(k, l)] } else { a * (zb[(k, l)] + zb[(l, k)]) };
                }
                out[*i] += acc;
            }
        }
        out
    }
}

fn bdot(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn bnorm(a: &Blocks) -> f64 {
    bdot(a, a).sqrt()
}

fn badd(a: &Blocks, b: &Blocks, s: f64) -> Blocks {
    a.iter().zip(b).map(|(x, y)| x + y * s).collect()
}

fn bscale(a: &Blocks, s: f64) -> Blocks {
    a.iter().map(|x| x * s).collect()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Factor `L` with `M = L L'`: Cholesky when possible, otherwise an
/// eigen-factor with eigenvalues clamped to a tiny positive floor.
fn psd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch.l());
    }
    let s = SymMatrix::from_dmatrix(m).ok()?;
    let (vals, vecs) = eigen_decomposition(&s).ok()?;
    let top = vals.last().copied().unwrap_or(0.0).max(0.0);
    if top <= 0.0 {
        return None;
    }
    let floor = top * 1e-300_f64.max(f64::EPSILON * f64::EPSILON);
    let mut l = vecs;
    for (j, &v) in vals.iter().enumerate() {
        let r = v.max(floor).sqrt();
        for i in 0..l.nrows() {
            l[(i, j)] *= r;
        }
    }
    Some(l)
}

/// Nesterov-Todd scaling for one block.
struct BlockScaling {
    /// `r` with `r⁻¹ s r⁻ᵀ = rᵀ z r = diag(lambda)`.
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
    /// `r rᵀ`: maps `z` to `s`.
    t: DMatrix<f64>,
    /// `r⁻ᵀ r⁻¹`: maps `s` to `z`.
    tinv: DMatrix<f64>,
}

impl BlockScaling {
    fn identity(n: usize) -> Self {
        let i = DMatrix::identity(n, n);
        BlockScaling { r: i.clone(), rinv: i.clone(), lambda: DVector::from_element(n, 1.0), t: i.clone(), tinv: i }
    }

    fn compute(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let ls = psd_factor(s)?;
        let lz = psd_factor(z)?;
        let prod = lz.transpose() * &ls;
        let svd = prod.try_svd(true, true, f64::EPSILON, 0)?;
        let u = svd.u?;
        let vt = svd.v_t?;
        let lam = svd.singular_values;
        if lam.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return None;
        }
        let n = s.nrows();
        let isq = DVector::from_iterator(n, lam.iter().map(|v| 1.0 / v.sqrt()));
        // r = Ls V Λ^{-1/2};  r⁻¹ = Λ^{-1/2} Uᵀ Lzᵀ
        let mut r = ls * vt.transpose();
        let mut rinv = u.transpose() * lz.transpose();
        for j in 0..n {
            r.column_mut(j).scale_mut(isq[j]);
            rinv.row_mut(j).scale_mut(isq[j]);
        }
        let t = sym(&r * r.transpose());
        let tinv = sym(rinv.transpose() * &rinv);
        Some(BlockScaling { r, rinv, lambda: lam, t, tinv })
    }

    /// `W s = r⁻¹ s r⁻ᵀ`.
    fn scale_s(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        sym(&self.rinv * s * self.rinv.transpose())
    }

    /// `W⁻ᵀ z = rᵀ z r`.
    fn scale_z(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        sym(self.r.transpose() * z * &self.r)
    }

    /// `W⁻¹ q = r q rᵀ`.
    fn unscale(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        sym(&self.r * q * self.r.transpose())
    }

    /// Largest `alpha` keeping `diag(lambda) + alpha d ⪰ 0` (infinite if none).
    fn max_step(&self, d: &DMatrix<f64>) -> f64 {
        let n = d.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| d[(i, j)] / (self.lambda[i] * self.lambda[j]).sqrt());
        let e = match SymMatrix::from_dmatrix(&m).ok().and_then(|s| eigen_decomposition(&s).ok()) {
            Some((v, _)) => v[0],
            None => return 0.0,
        };
        if e < 0.0 {
            -1.0 / e
        } else {
            f64::INFINITY
        }
    }
}

/// Factorized reduced KKT system for one scaling.
struct Kkt<'a> {
    data: &'a Data,
    scal: &'a [BlockScaling],
    chol: Cholesky<f64, Dyn>,
    /// `Hm⁻¹ Aᵀ` and the Cholesky factor of `A Hm⁻¹ Aᵀ`.
    hinv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Kkt<'a> {
    fn factor(data: &'a Data, scal: &'a [BlockScaling]) -> Option<Self> {
        let m = data.m;
        let mut hmat = DMatrix::<f64>::zeros(m, m);
        for (blk, cons) in data.bcons.iter().enumerate() {
            if cons.is_empty() {
                continue;
            }
            let tinv = &scal[blk].tinv;
            let n = tinv.nrows();
            let rows: Vec<Vec<(usize, f64)>> = cons
                .par_iter()
                .map(|(_, ents)| {
                    // Y = Tinv A_i Tinv as a sum of rank-one terms
                    let mut y = DMatrix::<f64>::zeros(n, n);
                    for &(k, l, a) in ents {
                        let tk = tinv.column(k);
                        let tl = tinv.column(l);
                        y.ger(a, &tk, &tl, 1.0);
                        if k != l {
                            y.ger(a, &tl, &tk, 1.0);
                        }
                    }
                    cons.iter()
                        .map(|(j, ents2)| {
                            let mut acc = 0.0;
                            for &(p, q, b) in ents2 {
                                acc += if p == q { b * y[(p, q)] } else { b * (y[(p, q)] + y[(q, p)]) };
                            }
                            (*j, acc)
                        })
                        .collect()
                })
                .collect();
            for ((i, _), row) in cons.iter().zip(rows) {
                for (j, v) in row {
                    hmat[(*i, j)] += v;
                }
            }
        }
        let hmat = sym(hmat);
        let mut hm = &hmat + data.a.transpose() * &data.a;
        let maxdiag = (0..m).map(|i| hm[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
        let mut chol = Cholesky::new(hm.clone());
        let mut delta = 1e-14 * maxdiag;
        while chol.is_none() && delta < 1e-2 * maxdiag {
            for i in 0..m {
                hm[(i, i)] += delta;
            }
            chol = Cholesky::new(hm.clone());
            delta *= 100.0;
        }
        let chol = chol?;
        let (hinv_at, schur) = if data.p > 0 {
            let hinv_at = chol.solve(&data.a.transpose());
            let s = sym(&data.a * &hinv_at);
            let mut sc = Cholesky::new(s.clone());
            let mut d = 1e-14 * (0..data.p).map(|i| s[(i, i)]).fold(1e-300f64, f64::max);
            let mut s2 = s;
            while sc.is_none() && d < 1.0 {
                for i in 0..data.p {
                    s2[(i, i)] += d;
                }
                sc = Cholesky::new(s2.clone());
                d *= 100.0;
            }
            (hinv_at, Some(sc?))
        } else {
            (DMatrix::zeros(m, 0), None)
        };
        Some(Kkt { data, scal, chol, hinv_at, schur })
    }

    fn wtw(&self, u: &Blocks) -> Blocks {
        u.iter().zip(self.scal).map(|(x, s)| sym(&s.tinv * x * &s.tinv)).collect()
    }

    fn wtw_inv(&self, u: &Blocks) -> Blocks {
        u.iter().zip(self.scal).map(|(x, s)| sym(&s.t * x * &s.t)).collect()
    }

    /// Applies `[0 Aᵀ Gᵀ; A 0 0; G 0 -(WᵀW)⁻¹]`.
    fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &Blocks) -> (DVector<f64>, DVector<f64>, Blocks) {
        let d = self.data;
        let rx = d.a.transpose() * y + d.gt(z);
        let ry = &d.a * x;
        let rz = badd(&d.g(x), &self.wtw_inv(z), -1.0);
        (rx, ry, rz)
    }

    fn solve_once(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &Blocks) -> (DVector<f64>, DVector<f64>, Blocks) {
        let d = self.data;
        let mut r1 = bx + d.gt(&self.wtw(bz));
        r1 += d.a.transpose() * by;
        let (ux, uy) = match &self.schur {
            None => (self.chol.solve(&r1), DVector::zeros(0)),
            Some(sc) => {
                let hr = self.chol.solve(&r1);
                let uy = sc.solve(&(&d.a * &hr - by));
                let ux = hr - &self.hinv_at * &uy;
                (ux, uy)
            }
        };
        let gx = d.g(&ux);
        let uz = self.wtw(&badd(&gx, bz, -1.0));
        (ux, uy, uz)
    }

    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &Blocks) -> (DVector<f64>, DVector<f64>, Blocks) {
        let (mut x, mut y, mut z) = self.solve_once(bx, by, bz);
        for _ in 0..2 {
            let (ax, ay, az) = self.apply(&x, &y, &z);
            let (ex, ey, ez) = (bx - ax, by - ay, badd(bz, &az, -1.0));
            let (dx, dy, dz) = self.solve_once(&ex, &ey, &ez);
            x += dx;
            y += dy;
            z = badd(&z, &dz, 1.0);
        }
        (x, y, z)
    }
}

/// Shifts a block vector into the interior of the PSD cone.
fn push_interior(v: &mut Blocks) {
    let mut ts = f64::NEG_INFINITY;
    for b in v.iter() {
        let s = SymMatrix::from_dmatrix(b).expect("square block");
        let e = eigen_decomposition(&s).map(|(vals, _)| vals[0]).unwrap_or(0.0);
        ts = ts.max(-e);
    }
    let nrm = bnorm(v);
    if ts >= -1e-8 * nrm.max(1.0) {
        let a = 1.0 + ts;
        for b in v.iter_mut() {
            for i in 0..b.nrows() {
                b[(i, i)] += a;
            }
        }
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    s: Blocks,
    z: Blocks,
    tau: f64,
    kappa: f64,
}

pub fn solve(prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    prob.validate()?;
    // free variables that appear in no constraint are either irrelevant or
    // make the problem unbounded; either way they stay out of the KKT system
    let mut used = vec![false; prob.num_free()];
    for c in &prob.constraints {
        for &(k, v) in &c.free {
            if v != 0.0 {
                used[k] = true;
            }
        }
    }
    if used.iter().all(|&u| u) {
        let data = Data::new(prob);
        let out = run(&data, opts);
        return Ok(finish(prob, &data, out));
    }
    if let Some(k) = (0..used.len()).find(|&k| !used[k] && prob.free_cost[k] != 0.0) {
        let mut free = vec![0.0; prob.num_free()];
        free[k] = -prob.free_cost[k].signum();
        return Ok(SdpSolution {
            status: SdpStatus::Unbounded,
            x: prob.blocks.iter().map(|&n| SymMatrix::zeros(n)).collect(),
            free,
            y: vec![0.0; prob.num_constraints()],
            z: prob.blocks.iter().map(|&n| SymMatrix::zeros(n)).collect(),
            objective_value: f64::NAN,
            dual_objective: f64::NAN,
            residuals: KktResiduals::default(),
            iterations: 0,
        });
    }
    let map: Vec<Option<usize>> = {
        let mut next = 0;
        used.iter()
            .map(|&u| {
                u.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let mut reduced = prob.clone();
    reduced.free_cost = (0..used.len()).filter(|&k| used[k]).map(|k| prob.free_cost[k]).collect();
    for c in &mut reduced.constraints {
        c.free = c.free.iter().filter_map(|&(k, v)| map[k].map(|kk| (kk, v))).collect();
    }
    let mut sol = solve(&reduced, opts)?;
    sol.free = map.iter().map(|m| m.map_or(0.0, |kk| sol.free[kk])).collect();
    Ok(sol)
}

/// Iterations without a 10% merit improvement before giving up.
const STALL_ITERS: usize = 20;

enum Outcome {
    Optimal(Iterate, usize),
    PrimalInfeasible(Iterate, usize),
    DualInfeasible(Iterate, usize),
    Stopped(Iterate, usize, SdpStatus),
}

fn run(d: &Data, opts: &SolverOptions) -> Outcome {
    let nu = d.degree() as f64;
    let resx0 = d.c.norm().max(1.0);
    let resy0 = d.b.norm().max(1.0);
    let resz0 = bnorm(&d.h).max(1.0);

    let id_scal: Vec<BlockScaling> = d.sizes.iter().map(|&n| BlockScaling::identity(n)).collect();
    let Some(k0) = Kkt::factor(d, &id_scal) else {
        let it = Iterate {
            x: DVector::zeros(d.m),
            y: DVector::zeros(d.p),
            s: d.zeros_blocks(),
            z: d.zeros_blocks(),
            tau: 1.0,
            kappa: 1.0,
        };
        return Outcome::Stopped(it, 0, SdpStatus::NumericalFailure);
    };
    let zero_x = DVector::zeros(d.m);
    let zero_y = DVector::zeros(d.p);
    let zero_z = d.zeros_blocks();
    let (x, _, sneg) = k0.solve(&zero_x, &d.b, &d.h);
    let mut s = bscale(&sneg, -1.0);
    let (_, y, z) = k0.solve(&(-&d.c), &zero_y, &zero_z);
    let mut z = z;
    push_interior(&mut s);
    push_interior(&mut z);
    drop(k0);
    let mut it = Iterate { x, y, s, z, tau: 1.0, kappa: 1.0 };

    let mut best: Option<(f64, Iterate)> = None;
    let mut stall = 0;

    for iter in 0..=opts.max_iter {
        let gx = d.g(&it.x);
        let rx = d.a.transpose() * &it.y + d.gt(&it.z) + &d.c * it.tau;
        let ry = &d.b * it.tau - &d.a * &it.x;
        let rz = badd(&badd(&it.s, &gx, 1.0), &d.h, -it.tau);
        let cx = d.c.dot(&it.x);
        let by = d.b.dot(&it.y);
        let hz = bdot(&d.h, &it.z);
        let rt = it.kappa + cx + by + hz;
        let gap = bdot(&it.s, &it.z);
        let mu = (gap + it.tau * it.kappa) / (nu + 1.0);

        let pres = (ry.norm() / resy0).max(bnorm(&rz) / resz0) / it.tau;
        let dres = rx.norm() / resx0 / it.tau;
        let pcost = cx / it.tau;
        let dcost = -(by + hz) / it.tau;
        let relgap = gap / (it.tau * it.tau) / (1.0 + pcost.abs().min(dcost.abs()));
        if opts.verbose {
            eprintln!(
                "{iter:3} pcost {pcost:+.9e} dcost {dcost:+.9e} gap {:.2e} pres {pres:.2e} dres {dres:.2e} tau {:.2e} kappa {:.2e}",
                gap / (it.tau * it.tau),
                it.tau,
                it.kappa
            );
        }
        if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
            return Outcome::Optimal(it, iter);
        }
        if by + hz < 0.0 {
            let pinf = (d.a.transpose() * &it.y + d.gt(&it.z)).norm() / resx0 / (-(by + hz));
            if pinf <= opts.feas_tol {
                return Outcome::PrimalInfeasible(it, iter);
            }
        }
        if cx < 0.0 {
            let dinf = ((&d.a * &it.x).norm() / resy0).max(bnorm(&badd(&gx, &it.s, 1.0)) / resz0) / (-cx);
            if dinf <= opts.feas_tol {
                return Outcome::DualInfeasible(it, iter);
            }
        }
        let merit = pres.max(dres).max(relgap);
        // stagnation away from an infeasibility ray (κ/τ small) means the
        // iterates have hit the limits of the conditioning
        if best.as_ref().is_some_and(|(b, _)| merit >= 0.9 * *b) && it.kappa <= 1e-3 * it.tau {
            stall += 1;
        } else {
            stall = 0;
        }
        if stall >= STALL_ITERS {
            return stopped(best, it, iter, SdpStatus::NumericalFailure);
        }
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((
                merit,
                Iterate {
                    x: it.x.clone(),
                    y: it.y.clone(),
                    s: it.s.clone(),
                    z: it.z.clone(),
                    tau: it.tau,
                    kappa: it.kappa,
                },
            ));
        }
        if iter == opts.max_iter {
            break;
        }

        let scal: Option<Vec<BlockScaling>> =
            it.s.iter().zip(&it.z).map(|(s, z)| BlockScaling::compute(s, z)).collect();
        let Some(scal) = scal else {
            return stopped(best, it, iter, SdpStatus::NumericalFailure);
        };
        let Some(kkt) = Kkt::factor(d, &scal) else {
            return stopped(best, it, iter, SdpStatus::NumericalFailure);
        };
        let (x1, y1, z1) = kkt.solve(&(-&d.c), &d.b, &d.h);
        let denom1 = d.c.dot(&x1) + d.b.dot(&y1) + bdot(&d.h, &z1) - it.kappa / it.tau;

        let lam_sq: Blocks = scal.iter().map(|sc| DMatrix::from_diagonal(&sc.lambda.map(|v| v * v))).collect();

        // returns (dx, dy, ds, dz, dtau, dkappa, scaled ds, scaled dz)
        let direction = |ds: &Blocks, dk: f64, eta: f64| {
            let q: Blocks = ds
                .iter()
                .zip(scal.iter())
                .map(|(dsb, sc)| {
                    let n = dsb.nrows();
                    DMatrix::from_fn(n, n, |i, j| 2.0 * dsb[(i, j)] / (sc.lambda[i] + sc.lambda[j]))
                })
                .collect();
            let wq: Blocks = q.iter().zip(scal.iter()).map(|(qb, sc)| sc.unscale(qb)).collect();
            let bx = &rx * (-eta);
            let byv = &ry * eta;
            let bz = badd(&bscale(&rz, -eta), &wq, -1.0);
            let (x0, y0, z0) = kkt.solve(&bx, &byv, &bz);
            let num = -eta * rt - dk / it.tau - d.c.dot(&x0) - d.b.dot(&y0) - bdot(&d.h, &z0);
            let dtau = num / denom1;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let dz = badd(&z0, &z1, dtau);
            let gdx = d.g(&dx);
            let dsv = badd(&badd(&bscale(&rz, -eta), &gdx, -1.0), &d.h, dtau);
            let dkappa = (dk - it.kappa * dtau) / it.tau;
            let sds: Blocks = dsv.iter().zip(scal.iter()).map(|(v, sc)| sc.scale_s(v)).collect();
            let sdz: Blocks = dz.iter().zip(scal.iter()).map(|(v, sc)| sc.scale_z(v)).collect();
            (dx, dy, dsv, dz, dtau, dkappa, sds, sdz)
        };
        let max_step = |sds: &Blocks, sdz: &Blocks, dtau: f64, dkappa: f64| {
            let mut a = f64::INFINITY;
            for (sc, (u, v)) in scal.iter().zip(sds.iter().zip(sdz.iter())) {
                a = a.min(sc.max_step(u)).min(sc.max_step(v));
            }
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // predictor
        let ds_aff = bscale(&lam_sq, -1.0);
        let dk_aff = -it.tau * it.kappa;
        let (_, _, _, _, dtau_a, dkap_a, sds_a, sdz_a) = direction(&ds_aff, dk_aff, 1.0);
        let alpha_a = max_step(&sds_a, &sdz_a, dtau_a, dkap_a).min(1.0);
        let sigma = (1.0 - alpha_a).powi(3);
        let eta = 1.0 - sigma;

        // corrector
        let ds_c: Blocks = lam_sq
            .iter()
            .zip(sds_a.iter().zip(sdz_a.iter()))
            .map(|(l2, (a, b))| {
                let n = l2.nrows();
                let jordan = (a * b + b * a) * 0.5;
                -l2 + DMatrix::identity(n, n) * (sigma * mu) - jordan
            })
            .collect();
        let dk_c = -it.tau * it.kappa + sigma * mu - dtau_a * dkap_a;
        let (dx, dy, dsv, dz, dtau, dkappa, sds, sdz) = direction(&ds_c, dk_c, eta);
        let alpha = (opts.step_factor * max_step(&sds, &sdz, dtau, dkappa)).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            return stopped(best, it, iter, SdpStatus::NumericalFailure);
        }
        it.x += dx * alpha;
        it.y += dy * alpha;
        it.s = badd(&it.s, &dsv, alpha).into_iter().map(sym).collect();
        it.z = badd(&it.z, &dz, alpha).into_iter().map(sym).collect();
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
        if !(it.tau > 0.0 && it.kappa > 0.0) || it.x.iter().any(|v| !v.is_finite()) {
            return stopped(best, it, iter, SdpStatus::NumericalFailure);
        }
    }
    stopped(best, it, opts.max_iter, SdpStatus::IterLimit)
}

fn stopped(best: Option<(f64, Iterate)>, it: Iterate, iter: usize, status: SdpStatus) -> Outcome {
    match best {
        Some((_, b)) => Outcome::Stopped(b, iter, status),
        None => Outcome::Stopped(it, iter, status),
    }
}

fn to_sym(b: &Blocks) -> Vec<SymMatrix> {
    b.iter().map(|m| SymMatrix::from_dmatrix(m).expect("square block")).collect()
}

fn finish(prob: &SdpProblem, d: &Data, out: Outcome) -> SdpSolution {
    let (status, it, iters, norm) = match out {
        Outcome::Optimal(it, k) => {
            let t = it.tau;
            (SdpStatus::Optimal, it, k, t)
        }
        Outcome::Stopped(it, k, st) => {
            let t = it.tau;
            (st, it, k, t)
        }
        // cone-LP dual infeasible: x is a ray with c'x < 0, i.e. b'y > 0 for
        // the user's multipliers
        Outcome::DualInfeasible(it, k) => {
            let t = -d.c.dot(&it.x);
            (SdpStatus::Infeasible, it, k, t)
        }
        Outcome::PrimalInfeasible(it, k) => {
            let t = -(d.b.dot(&it.y) + bdot(&d.h, &it.z));
            (SdpStatus::Unbounded, it, k, t)
        }
    };
    let x = to_sym(&bscale(&it.z, 1.0 / norm));
    let free: Vec<f64> = it.y.iter().map(|v| v / norm).collect();
    let y: Vec<f64> = it.x.iter().zip(&d.scale).map(|(v, s)| v * s / norm).collect();
    let z = to_sym(&bscale(&it.s, 1.0 / norm));
    let (objective_value, dual_objective, residuals) = match status {
        SdpStatus::Infeasible | SdpStatus::Unbounded => (f64::NAN, f64::NAN, KktResiduals::default()),
        _ => {
            let pobj = prob.objective_value(&x, &free);
            let dobj: f64 = prob.constraints.iter().zip(&y).map(|(c, yi)| c.rhs * yi).sum();
            (pobj, dobj, kkt_residuals(prob, &x, &free, &y, &z, pobj, dobj))
        }
    };
    SdpSolution { status, x, free, y, z, objective_value, dual_objective, residuals, iterations: iters }
}

fn kkt_residuals(
    prob: &SdpProblem,
    x: &[SymMatrix],
    free: &[f64],
    y: &[f64],
    z: &[SymMatrix],
    pobj: f64,
    dobj: f64,
) -> KktResiduals {
    let primal = (0..prob.num_constraints())
        .map(|i| {
            (prob.constraint_value(i, x, free) - prob.constraints[i].rhs).abs() / (1.0 + prob.constraints[i].rhs.abs())
        })
        .fold(0.0, f64::max);
    let direct = prob.dual_slack(y);
    let cnorm: f64 =
        prob.dual_slack(&vec![0.0; y.len()]).iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    let slack_err: f64 = direct.iter().zip(z).map(|(a, b)| a.sub(b).frobenius_norm().powi(2)).sum::<f64>().sqrt();
    let mut free_err: f64 = 0.0;
    for (k, &ck) in prob.free_cost.iter().enumerate() {
        let mut acc = 0.0;
        for (c, yi) in prob.constraints.iter().zip(y) {
            for &(kk, v) in &c.free {
                if kk == k {
                    acc += v * yi;
                }
            }
        }
        free_err = free_err.max((acc - ck).abs() / (1.0 + ck.abs()));
    }
    KktResiduals {
        primal,
        dual: free_err.max(slack_err / (1.0 + cnorm)),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginResult {
    /// `max t` with `X ⪰ t I`; `+inf` when unbounded, `-inf` when the
    /// affine constraints alone are inconsistent.
    pub margin: f64,
    pub witness: Vec<SymMatrix>,
    pub solution: SdpSolution,
}

/// Maximizes `t` subject to the constraints of `prob` and `X ⪰ t I`. The
/// objective of `prob` is ignored.
pub fn feasibility_margin(prob: &SdpProblem, opts: &SolverOptions) -> Result<MarginResult, SdpError> {
    prob.validate()?;
    let mut q = SdpProblem::new(prob.blocks.clone());
    for _ in &prob.free_cost {
        q.add_free(0.0);
    }
    let t = q.add_free(-1.0);
    for c in &prob.constraints {
        let k = q.add_constraint(c.rhs);
        let mut trace = 0.0;
        for e in &c.entries {
            q.add_entry(k, e.block, e.row, e.col, e.value);
            if e.row == e.col {
                trace += e.value;
            }
        }
        for &(v, a) in &c.free {
            q.add_free_coeff(k, v, a);
        }
        q.add_free_coeff(k, t, trace);
    }
    let sol = solve(&q, opts)?;
    let (margin, witness) = match sol.status {
        SdpStatus::Unbounded => (f64::INFINITY, Vec::new()),
        SdpStatus::Infeasible => (f64::NEG_INFINITY, Vec::new()),
        _ => {
            let tv = sol.free[t];
            let w = sol.x.iter().map(|xb| xb.add(&SymMatrix::identity(xb.dim()).scale(tv))).collect();
            (tv, w)
        }
    };
    Ok(MarginResult { margin, witness, solution: sol })
}
