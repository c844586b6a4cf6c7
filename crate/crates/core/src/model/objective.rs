//! Synthetic members of `F(m_f, L_f)` for empirical checks.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::FunctionClass;

pub trait Objective: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn minimizer(&self) -> &[f64];
    fn min_value(&self) -> f64;
}

fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// `½(x − x⋆)ᵀH(x − x⋆) + f⋆` with `spec(H) ⊂ [m_f, L_f]`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    h: DMatrix<f64>,
    x_star: Vec<f64>,
    f_star: f64,
}

impl Quadratic {
    pub fn new(h: DMatrix<f64>, x_star: Vec<f64>, f_star: f64) -> Self {
        Quadratic { h, x_star, f_star }
    }

    /// Random rotation of a spectrum containing both `m_f` and `L_f`
    /// (when `d ≥ 2`), with minimizer and optimal value drawn at random.
    pub fn random<R: Rng>(fc: &FunctionClass, d: usize, rng: &mut R) -> Self {
        let eig: Vec<f64> = (0..d)
            .map(|i| match i {
                0 => fc.l,
                1 => fc.m,
                _ => rng.random_range(fc.m..=fc.l),
            })
            .collect();
        let q = random_orthogonal(d, rng);
        let h = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        let h = (&h + h.transpose()) * 0.5;
        let x_star = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Quadratic { h, x_star, f_star: rng.random_range(-1.0..1.0) }
    }

    fn shift(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(&self.x_star).map(|(a, b)| a - b))
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let z = self.shift(x);
        0.5 * z.dot(&(&self.h * &z)) + self.f_star
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (&self.h * self.shift(x)).iter().copied().collect()
    }

    fn minimizer(&self) -> &[f64] {
        &self.x_star
    }

    fn min_value(&self) -> f64 {
        self.f_star
    }
}

/// `c·log Σᵢ exp(aᵢᵀx − bᵢ) + (m_f/2)‖x‖²`.
///
/// The Hessian of log-sum-exp has spectral norm at most ½, so choosing
/// `c = 2(L_f − m_f)/‖A‖₂²` keeps the whole function in `F(m_f, L_f)`.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    m: f64,
    x_star: Vec<f64>,
    f_star: f64,
}

impl LogSumExp {
    pub fn new(fc: &FunctionClass, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let norm = a.singular_values().max();
        let c = if norm > 0.0 { 2.0 * (fc.l - fc.m) / (norm * norm) } else { 0.0 };
        let mut f = LogSumExp { a, b, c, m: fc.m, x_star: Vec::new(), f_star: 0.0 };
        f.x_star = f.newton();
        f.f_star = f.value(&f.x_star);
        f
    }

    pub fn random<R: Rng>(fc: &FunctionClass, d: usize, terms: usize, rng: &mut R) -> Self {
        let a = DMatrix::from_fn(terms, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DVector::from_fn(terms, |_, _| rng.random_range(-1.0..1.0));
        Self::new(fc, a, b)
    }

    pub fn scale(&self) -> f64 {
        self.c
    }

    fn softmax(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let z = &self.a * x - &self.b;
        let zmax = z.max();
        let w = z.map(|v| (v - zmax).exp());
        let s = w.sum();
        (zmax + s.ln(), w / s)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (_, p) = self.softmax(x);
        let inner = DMatrix::from_diagonal(&p) - &p * p.transpose();
        self.a.transpose() * inner * &self.a * self.c + DMatrix::identity(x.len(), x.len()) * self.m
    }

    fn newton(&self) -> Vec<f64> {
        let d = self.a.ncols();
        let mut x = DVector::zeros(d);
        for _ in 0..100 {
            let g = DVector::from_vec(self.gradient(x.as_slice()));
            if g.norm() < 1e-14 {
                break;
            }
            let step = self.hessian(&x).cholesky().map(|c| c.solve(&g)).unwrap_or_else(|| g.clone() / self.m);
            let f0 = self.value(x.as_slice());
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let xn = &x - &step * t;
                // near the minimizer the decrease in f drops below rounding,
                // so a shrinking gradient is accepted too
                let gn = DVector::from_vec(self.gradient(xn.as_slice())).norm();
                if self.value(xn.as_slice()) <= f0 - 0.25 * t * slope || gn < (1.0 - 0.25 * t) * g.norm() || t < 1e-12 {
                    x = xn;
                    break;
                }
                t *= 0.5;
            }
        }
        x.iter().copied().collect()
    }
}

impl Objective for LogSumExp {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let (lse, _) = self.softmax(&v);
        self.c * lse + 0.5 * self.m * v.norm_squared()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        let (_, p) = self.softmax(&v);
        let g = self.a.transpose() * p * self.c + v * self.m;
        g.iter().copied().collect()
    }

    fn minimizer(&self) -> &[f64] {
        &self.x_star
    }

    fn min_value(&self) -> f64 {
        self.f_star
    }
}
