//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rhotune::analysis::certify_rate;
use rhotune::certificate::{verify_certificate, Certificate, CertificateProblem};
use rhotune::design::{design_grid, design_sos, DesignOptions, DesignResult, DesignSpec, Method};
use rhotune::model::{builtin_family, AlgorithmFamily, FunctionClass};
use rhotune::poly::Polynomial;
use rhotune::sdp::{solve, SdpProblem, SdpStatus, SolverOptions};
use rhotune::sos::{check_sos, lower_bound_constrained, lower_bound_unconstrained, min_order};

/// Certificates collected by the other criteria, re-verified by criterion 6.
type Issued = Vec<(String, Arc<dyn AlgorithmFamily>, FunctionClass, Vec<f64>, Certificate)>;

fn fam(name: &str) -> Arc<dyn AlgorithmFamily> {
    builtin_family(name).unwrap()
}

fn kappa(k: f64) -> FunctionClass {
    FunctionClass::from_kappa(k).unwrap()
}

fn within(label: &str, t0: Instant, limit: Duration) -> Result<(), String> {
    let el = t0.elapsed();
    if el > limit {
        return Err(format!("{label} took {el:.1?}, limit {limit:?}"));
    }
    Ok(())
}

fn analyze(issued: &mut Issued, family: &str, fc: FunctionClass, theta: &[f64]) -> Result<f64, String> {
    let f = fam(family);
    let prob = CertificateProblem::new(f.clone(), fc);
    let r = certify_rate(&prob, theta, 1e-4).map_err(|e| format!("{family} {theta:?}: {e}"))?;
    issued.push((format!("analyze {family} {theta:?} on ({}, {})", fc.m, fc.l), f, fc, theta.to_vec(), r.certificate));
    Ok(r.rho_star)
}

fn gradient_rows(issued: &mut Issued, m: f64, k: f64) -> Result<(f64, f64), String> {
    let fc = FunctionClass::new(m, m * k).unwrap();
    let a = analyze(issued, "gradient", fc, &[1.0 / fc.l])?;
    let b = analyze(issued, "gradient", fc, &[2.0 / (fc.m + fc.l)])?;
    Ok((a, b))
}

fn criterion1(issued: &mut Issued) -> Result<String, String> {
    let mut notes = Vec::new();
    for k in [2.0, 5.0, 10.0, 100.0] {
        let t0 = Instant::now();
        let (a, b) = gradient_rows(issued, 1.0, k)?;
        within(&format!("kappa {k}"), t0, Duration::from_secs(5))?;
        let (wa, wb) = (1.0 - 1.0 / k, (k - 1.0) / (k + 1.0));
        if (a - wa).abs() > 1e-3 || (b - wb).abs() > 1e-3 {
            return Err(format!("kappa {k}: got ({a:.6}, {b:.6}), want ({wa:.6}, {wb:.6})"));
        }
        notes.push(format!("k={k}: {a:.4}/{b:.4}"));
    }
    Ok(notes.join(", "))
}

fn criterion2(issued: &mut Issued) -> Result<String, String> {
    let mut notes = Vec::new();
    for k in [10.0f64, 100.0] {
        let t0 = Instant::now();
        let beta = (k.sqrt() - 1.0) / (k.sqrt() + 1.0);
        let rho = analyze(issued, "nesterov", kappa(k), &[1.0 / k, beta])?;
        within(&format!("kappa {k}"), t0, Duration::from_secs(10))?;
        let bound = (1.0 - 1.0 / k.sqrt()).sqrt();
        if rho > bound + 1e-3 {
            return Err(format!("kappa {k}: {rho:.6} > {bound:.6}"));
        }
        notes.push(format!("k={k}: {rho:.4} <= {bound:.4}"));
    }
    Ok(notes.join(", "))
}

fn record(issued: &mut Issued, spec: &DesignSpec, r: &DesignResult) {
    issued.push((
        format!("design {} {:?} on kappa {}", r.method, r.theta_star, spec.fc.condition_number()),
        spec.family.clone(),
        spec.fc,
        r.theta_star.clone(),
        r.analysis.certificate.clone(),
    ));
}

fn sandwich(r: &DesignResult) -> Result<f64, String> {
    let lb = r.rho_lower_bound.ok_or("no lower bound")?;
    if lb > r.rho_certified + 1e-6 {
        return Err(format!("lower bound {lb} above certified {}", r.rho_certified));
    }
    Ok(r.rho_certified - lb)
}

fn criterion3(issued: &mut Issued) -> Result<String, String> {
    let mut notes = Vec::new();
    for k in [2.0, 5.0, 10.0, 50.0] {
        let t0 = Instant::now();
        let spec = DesignSpec::new(fam("gradient"), kappa(k)).with_method(Method::Sos);
        let r = design_sos(&spec, &DesignOptions::default()).map_err(|e| format!("kappa {k}: {e}"))?;
        within(&format!("kappa {k}"), t0, Duration::from_secs(30))?;
        record(issued, &spec, &r);
        let want = (k - 1.0) / (k + 1.0);
        let gap = sandwich(&r)?;
        if (r.rho_certified - want).abs() > 1e-2 || gap > 2e-2 {
            return Err(format!("kappa {k}: rho {:.6} (want {want:.6}), gap {gap:.2e}", r.rho_certified));
        }
        notes.push(format!("k={k}: {:.4} gap {gap:.1e}", r.rho_certified));
    }
    Ok(notes.join(", "))
}

fn criterion4(issued: &mut Issued) -> Result<String, String> {
    let mut notes = Vec::new();
    for k in [10.0f64, 100.0] {
        let spec = DesignSpec::new(fam("nesterov"), kappa(k)).freeze("h", 1.0 / k).unwrap().with_method(Method::Sos);
        let r = design_sos(&spec, &DesignOptions::default()).map_err(|e| format!("kappa {k}: {e}"))?;
        record(issued, &spec, &r);
        sandwich(&r)?;
        let lo = (k.sqrt() - 1.0) / (k.sqrt() + 1.0);
        let hi = (1.0 - 1.0 / k.sqrt()).sqrt();
        if !(lo - 1e-3 <= r.rho_certified && r.rho_certified <= hi + 1e-3) {
            return Err(format!("kappa {k}: {:.6} outside [{lo:.6}, {hi:.6}]", r.rho_certified));
        }
        notes.push(format!("k={k}: {lo:.4} <= {:.4} <= {hi:.4}", r.rho_certified));
    }
    Ok(notes.join(", "))
}

fn criterion5(issued: &mut Issued) -> Result<String, String> {
    let t0 = Instant::now();
    let k = 10.0f64;
    let spec = DesignSpec::new(fam("nesterov"), kappa(k))
        .with_box("h", 0.0, 2.0 / k)
        .and_then(|s| s.with_box("beta", 0.0, 1.0))
        .unwrap();
    let r = design_grid(&spec, &DesignOptions { resolution: 50, ..Default::default() }).map_err(|e| e.to_string())?;
    within("grid", t0, Duration::from_secs(600))?;
    record(issued, &spec, &r);
    let table = r.sweep_table.as_ref().ok_or("no sweep table")?;
    if table.len() != 2500 {
        return Err(format!("{} rows", table.len()));
    }
    let textbook = analyze(issued, "nesterov", kappa(k), &[1.0 / k, (k.sqrt() - 1.0) / (k.sqrt() + 1.0)])?;
    let grid_min = table.iter().filter_map(|row| row.rho).fold(f64::INFINITY, f64::min);
    let feasible = table.iter().filter(|row| row.feasible).count();
    if grid_min > textbook + 1e-3 {
        return Err(format!("grid minimum {grid_min:.6} > textbook {textbook:.6}"));
    }
    if feasible == 0 || feasible == table.len() {
        return Err(format!("{feasible} of {} points feasible", table.len()));
    }
    if table.iter().any(|row| row.feasible != row.rho.is_some_and(|v| v.is_finite() && v < 1.0)) {
        return Err("feasible flag disagrees with rho".into());
    }
    Ok(format!("min {grid_min:.4} <= textbook {textbook:.4}, {feasible}/2500 feasible, {:.1?}", t0.elapsed()))
}

fn criterion6(issued: &Issued) -> Result<String, String> {
    for (label, f, fc, theta, cert) in issued {
        let prob = CertificateProblem::new(f.clone(), *fc);
        let rep = verify_certificate(&prob, theta, cert, 20);
        if !rep.passed || rep.trials != 20 || rep.steps != 200 {
            return Err(format!("{label}: {rep:?}"));
        }
    }
    Ok(format!("{} certificates re-verified", issued.len()))
}

fn lambda_max(d: &[f64]) -> Result<f64, String> {
    let n = d.len();
    let mut p = SdpProblem::new(vec![n]);
    for (i, v) in d.iter().enumerate() {
        p.add_objective(0, i, i, -v);
    }
    let c = p.add_constraint(1.0);
    for i in 0..n {
        p.add_entry(c, 0, i, i, 1.0);
    }
    let s = solve(&p, &SolverOptions::default()).map_err(|e| e.to_string())?;
    if s.status != SdpStatus::Optimal {
        return Err(format!("lambda_max status {:?}", s.status));
    }
    Ok(-s.objective_value)
}

fn lp_diagonal(c: &[f64], a: &[f64], b: f64) -> Result<f64, String> {
    // min c'x s.t. a'x = b, x >= 0 as a diagonal SDP
    let mut p = SdpProblem::new(vec![1; c.len()]);
    for (k, v) in c.iter().enumerate() {
        p.add_objective(k, 0, 0, *v);
    }
    let row = p.add_constraint(b);
    for (k, v) in a.iter().enumerate() {
        p.add_entry(row, k, 0, 0, *v);
    }
    let s = solve(&p, &SolverOptions::default()).map_err(|e| e.to_string())?;
    if s.status != SdpStatus::Optimal {
        return Err(format!("LP status {:?}", s.status));
    }
    Ok(s.objective_value)
}

fn poly(s: &str) -> Polynomial {
    s.parse().unwrap()
}

fn criterion7() -> Result<String, String> {
    // λ_max(diag(d)) = max d; LP optimum = min_k b c_k / a_k for a > 0
    for d in [vec![1.0, 3.0], vec![-2.0, 0.5, 0.25], vec![4.0, 4.0, -1.0, 2.0]] {
        let want = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let got = lambda_max(&d)?;
        if (got - want).abs() > 1e-6 {
            return Err(format!("lambda_max {d:?}: {got} != {want}"));
        }
    }
    for (c, a, b) in
        [(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0], 1.0), (vec![3.0, 1.0, 4.0, 1.5], vec![2.0, 0.5, 1.0, 3.0], 2.0)]
    {
        let want = c.iter().zip(&a).map(|(ci, ai)| b * ci / ai).fold(f64::INFINITY, f64::min);
        let got = lp_diagonal(&c, &a, b)?;
        if (got - want).abs() > 1e-6 {
            return Err(format!("LP {c:?}: {got} != {want}"));
        }
    }
    let sos = |s: &str, d| check_sos(&poly(s), d).map(|c| c.is_sos()).map_err(|e| e.to_string());
    if !sos("(x^2 + 1)^2", 4)? || sos("x^2 - 1", 2)? || sos("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1", 6)? {
        return Err("check_sos misclassified a fixture".into());
    }
    let g = lower_bound_unconstrained(&poly("x^4 - 3*x^2")).map_err(|e| e.to_string())?.gamma;
    if (g + 2.25).abs() > 1e-6 {
        return Err(format!("x^4 - 3x^2 bound {g}"));
    }
    let problems: [(&str, &[&str]); 3] = [
        ("x^2*y - x + y^2", &["1 - x^2 - y^2"]),
        ("x^4 - 3*x^2 + y", &["y + 1", "1 - y", "2 - x^2"]),
        ("-x - y", &["1 - x^2 - y^2", "x*y"]),
    ];
    for (obj, cons) in problems {
        let obj = poly(obj);
        let g: Vec<Polynomial> = cons.iter().map(|s| poly(s)).collect();
        let lo = min_order(&obj, &g, &[]);
        let mut prev = f64::NEG_INFINITY;
        for order in lo..lo + 2 {
            let r = lower_bound_constrained(&obj, &g, order).map_err(|e| e.to_string())?;
            if r.gamma < prev - 1e-6 {
                return Err(format!("hierarchy decreased at order {order}: {} < {prev}", r.gamma));
            }
            prev = r.gamma;
        }
    }
    Ok("SDP families, SOS fixtures, -9/4 bound, hierarchy".into())
}

fn criterion8(issued: &mut Issued) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for k in [2.0, 5.0, 10.0, 100.0] {
        let (a1, b1) = gradient_rows(issued, 1.0, k)?;
        let (a2, b2) = gradient_rows(issued, 10.0, k)?;
        worst = worst.max((a1 - a2).abs()).max((b1 - b2).abs());
    }
    if worst > 1e-6 {
        return Err(format!("largest difference {worst:.2e}"));
    }
    Ok(format!("largest difference {worst:.2e}"))
}

fn main() {
    let mut issued: Issued = Vec::new();
    let mut results = vec![
        (1, "gradient rates", criterion1(&mut issued)),
        (2, "nesterov rate", criterion2(&mut issued)),
        (3, "gradient design", criterion3(&mut issued)),
        (4, "nesterov design ordering", criterion4(&mut issued)),
        (5, "parameter sweep", criterion5(&mut issued)),
        (8, "scale invariance", criterion8(&mut issued)),
    ];
    // soundness covers everything issued above
    results.push((6, "certificate soundness", criterion6(&issued)));
    results.push((7, "solver and relaxation suites", criterion7()));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, r) in results {
        match r {
            Ok(msg) => println!("criterion {n} PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
