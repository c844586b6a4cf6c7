use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rhotune::analysis::{certify_rate, AnalysisError, DEFAULT_EPS};
use rhotune::certificate::{verify_certificate_seeded, CertificateProblem};
use rhotune::design::{
    design, grid_points, DesignError, DesignOptions, DesignResult, DesignSpec, Method, Scalarization, SweepRow,
};
use rhotune::model::{
    full_fixed_point, lyapunov_values, simulate, AlgorithmFamily, FamilyRegistry, FunctionClass, LogSumExp, Objective,
    Quadratic,
};

#[derive(Parser)]
#[command(name = "rhotune", version, about = "Certify and tune convergence rates of first-order methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the rate of one tuning by bisection
    Analyze(AnalyzeArgs),
    /// Tune parameters within a box
    Design(DesignArgs),
    /// Grid sweep written as CSV
    Sweep(SweepArgs),
    /// Certify the textbook tunings for a list of condition numbers
    Table(TableArgs),
    /// Run a method on a synthetic objective
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem file (JSON); flags override its fields
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    /// Extra family definition (JSON) to register before lookup
    #[arg(long, value_name = "FILE")]
    family_file: Option<PathBuf>,
    /// Condition number; sets m_f = 1, L_f = kappa
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long = "m-f")]
    m_f: Option<f64>,
    #[arg(long = "L-f")]
    l_f: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Parameters as name=value pairs, e.g. h=0.1,beta=0.5
    #[arg(long)]
    theta: Option<String>,
    /// Bisection tolerance on rho^2
    #[arg(long)]
    eps: Option<f64>,
    /// Random instances for the empirical check (0 skips it)
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    box_args: BoxArgs,
    /// grid, sos or both
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Starting relaxation order
    #[arg(long)]
    order: Option<u32>,
    /// sos-matrix, trace-det or minors
    #[arg(long)]
    scalarization: Option<String>,
    /// Also write the grid sweep as CSV
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    box_args: BoxArgs,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct BoxArgs {
    /// Search interval, e.g. --box h=0:0.2 (repeatable)
    #[arg(long = "box", value_name = "NAME=LO:HI")]
    boxes: Vec<String>,
    /// Pin a parameter, e.g. --freeze h=0.1 (repeatable)
    #[arg(long = "freeze", value_name = "NAME=VALUE")]
    freeze: Vec<String>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,100")]
    kappa: Vec<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// text or json
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    theta: Option<String>,
    /// quadratic or logsumexp
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Certify the tuning and add Lyapunov values to the output
    #[arg(long)]
    certify: bool,
}

/// Problem file layout.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    family: Option<String>,
    family_definition: Option<serde_json::Value>,
    theta: Option<BTreeMap<String, f64>>,
    theta_box: Option<BTreeMap<String, [f64; 2]>>,
    frozen: Option<BTreeMap<String, f64>>,
    m_f: Option<f64>,
    #[serde(rename = "L_f")]
    l_f: Option<f64>,
    kappa: Option<f64>,
    #[serde(default)]
    options: SpecOptions,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecOptions {
    eps: Option<f64>,
    method: Option<String>,
    resolution: Option<usize>,
    order: Option<u32>,
    scalarization: Option<String>,
    seed: Option<u64>,
    trials: Option<usize>,
    objective: Option<String>,
    dim: Option<usize>,
    steps: Option<usize>,
}

/// Errors that map to exit status 2: the question was well posed but no
/// rate below 1 could be certified.
#[derive(Debug)]
struct Uncertifiable(String);

impl std::fmt::Display for Uncertifiable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Uncertifiable {}

fn classify_analysis(e: AnalysisError) -> anyhow::Error {
    match e {
        AnalysisError::NeverFeasible => Uncertifiable(e.to_string()).into(),
        other => other.into(),
    }
}

fn classify_design(e: DesignError) -> anyhow::Error {
    match e {
        DesignError::AllInfeasible | DesignError::Analysis(AnalysisError::NeverFeasible) => {
            Uncertifiable(e.to_string()).into()
        }
        other => other.into(),
    }
}

struct Problem {
    file: SpecFile,
    family: Arc<dyn AlgorithmFamily>,
    fc: FunctionClass,
    seed: u64,
}

fn load_problem(args: &ProblemArgs) -> Result<Problem> {
    let file: SpecFile = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SpecFile::default(),
    };
    let mut registry = FamilyRegistry::with_builtins();
    if let Some(def) = &file.family_definition {
        registry.register_json(&def.to_string())?;
    }
    if let Some(path) = &args.family_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        registry.register_json(&text)?;
    }
    let name = args
        .family
        .clone()
        .or_else(|| file.family.clone())
        .ok_or_else(|| anyhow!("no family given (use --family or a spec file)"))?;
    let family = registry.get(&name)?;

    let fc = if let Some(k) = args.kappa {
        if !(k >= 1.0) {
            bail!("kappa must be at least 1, got {k}");
        }
        FunctionClass::from_kappa(k)?
    } else if args.m_f.is_some() || args.l_f.is_some() {
        let m = args.m_f.or(file.m_f).ok_or_else(|| anyhow!("--m-f is required with --L-f"))?;
        let l = args.l_f.or(file.l_f).ok_or_else(|| anyhow!("--L-f is required with --m-f"))?;
        FunctionClass::new(m, l)?
    } else if let Some(k) = file.kappa {
        FunctionClass::from_kappa(k)?
    } else {
        match (file.m_f, file.l_f) {
            (Some(m), Some(l)) => FunctionClass::new(m, l)?,
            _ => bail!("no function class given (use --kappa or --m-f/--L-f)"),
        }
    };
    let seed = args.seed.or(file.options.seed).unwrap_or(0);
    Ok(Problem { file, family, fc, seed })
}

fn parse_pairs(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("expected name=value, got '{kv}'"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("bad number in '{kv}'"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn resolve_theta(p: &Problem, flag: &Option<String>) -> Result<Vec<f64>> {
    let pairs = match flag {
        Some(t) => parse_pairs(t)?,
        None => match &p.file.theta {
            Some(m) => m.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            None => bail!("no parameters given (use --theta, e.g. --theta h=0.1)"),
        },
    };
    Ok(p.family.parse_theta(&pairs)?)
}

fn write_output(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct AnalyzeOutput {
    family: String,
    theta: BTreeMap<String, f64>,
    m_f: f64,
    #[serde(rename = "L_f")]
    l_f: f64,
    analysis: rhotune::analysis::AnalysisResult,
    verification: Option<rhotune::certificate::VerificationReport>,
}

fn named(family: &dyn AlgorithmFamily, theta: &[f64]) -> BTreeMap<String, f64> {
    family.param_names().iter().cloned().zip(theta.iter().copied()).collect()
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let theta = resolve_theta(&p, &args.theta)?;
    let eps = args.eps.or(p.file.options.eps).unwrap_or(DEFAULT_EPS);
    let prob = CertificateProblem::new(p.family.clone(), p.fc);
    let analysis = certify_rate(&prob, &theta, eps).map_err(classify_analysis)?;
    let trials = args.trials.or(p.file.options.trials).unwrap_or(20);
    let verification =
        (trials > 0).then(|| verify_certificate_seeded(&prob, &theta, &analysis.certificate, trials, p.seed));
    let out = AnalyzeOutput {
        family: p.family.name().to_string(),
        theta: named(p.family.as_ref(), &theta),
        m_f: p.fc.m,
        l_f: p.fc.l,
        analysis,
        verification,
    };
    write_output(&args.problem.output, &serde_json::to_string_pretty(&out)?)
}

fn parse_box(text: &str) -> Result<(String, f64, f64)> {
    let (name, range) = text.split_once('=').ok_or_else(|| anyhow!("expected NAME=LO:HI, got '{text}'"))?;
    let (lo, hi) = range.split_once(':').ok_or_else(|| anyhow!("expected NAME=LO:HI, got '{text}'"))?;
    Ok((name.trim().to_string(), lo.trim().parse()?, hi.trim().parse()?))
}

fn build_spec(p: &Problem, boxes: &BoxArgs, method: Method) -> Result<DesignSpec> {
    let mut spec = DesignSpec::new(p.family.clone(), p.fc).with_method(method);
    if let Some(b) = &p.file.theta_box {
        for (name, [lo, hi]) in b {
            spec = spec.with_box(name, *lo, *hi)?;
        }
    }
    if let Some(f) = &p.file.frozen {
        for (name, v) in f {
            spec = spec.freeze(name, *v)?;
        }
    }
    for b in &boxes.boxes {
        let (name, lo, hi) = parse_box(b)?;
        spec = spec.with_box(&name, lo, hi)?;
    }
    for (name, v) in boxes.freeze.iter().map(|s| parse_pairs(s)).collect::<Result<Vec<_>>>()?.into_iter().flatten() {
        spec = spec.freeze(&name, v)?;
    }
    // the relaxation for Nesterov's method is posed with the stepsize fixed
    let touched_h = boxes.boxes.iter().chain(&boxes.freeze).any(|s| s.trim_start().starts_with("h="))
        || p.file.theta_box.as_ref().is_some_and(|b| b.contains_key("h"))
        || p.file.frozen.as_ref().is_some_and(|f| f.contains_key("h"));
    if method != Method::Grid && p.family.name() == "nesterov" && !touched_h {
        spec = spec.freeze("h", 1.0 / p.fc.l)?;
        eprintln!("note: h frozen at 1/L_f = {} for the relaxation", 1.0 / p.fc.l);
    }
    spec.validate()?;
    Ok(spec)
}

fn write_sweep_csv<W: std::io::Write>(w: W, names: &[String], rows: &[SweepRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    header.extend(["rho", "feasible"]);
    wr.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.theta.iter().map(|v| format!("{v}")).collect();
        rec.push(r.rho.map_or(String::new(), |v| format!("{v}")));
        rec.push(r.feasible.to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn design_options(
    p: &Problem,
    resolution: Option<usize>,
    order: Option<u32>,
    scal: Option<&str>,
) -> Result<DesignOptions> {
    let o = &p.file.options;
    let mut opts = DesignOptions { seed: p.seed, ..DesignOptions::default() };
    if let Some(r) = resolution.or(o.resolution) {
        opts.resolution = r;
    }
    opts.order = order.or(o.order);
    if let Some(eps) = o.eps {
        opts.fine_eps = eps;
    }
    if let Some(s) = scal.or(o.scalarization.as_deref()) {
        opts.scalarization = s.parse::<Scalarization>()?;
    }
    if let Some(t) = o.trials {
        opts.verify_trials = t;
    }
    Ok(opts)
}

fn report_summary(r: &DesignResult) {
    let theta: Vec<String> = r.param_names.iter().zip(&r.theta_star).map(|(n, v)| format!("{n}={v:.6}")).collect();
    let lb = r.rho_lower_bound.map_or(String::new(), |lb| format!(", lower bound {lb:.6}"));
    eprintln!("{} argmin: {} rho {:.6}{lb}", r.method, theta.join(","), r.rho_certified);
}

fn cmd_design(args: &DesignArgs) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let method: Method = args.method.as_deref().or(p.file.options.method.as_deref()).unwrap_or("grid").parse()?;
    let spec = build_spec(&p, &args.box_args, method)?;
    let opts = design_options(&p, args.resolution, args.order, args.scalarization.as_deref())?;
    let result = design(&spec, &opts).map_err(classify_design)?;
    if let (Some(path), Some(rows)) = (&args.csv, &result.sweep_table) {
        let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        write_sweep_csv(f, &result.param_names, rows)?;
    }
    report_summary(&result);
    write_output(&args.problem.output, &result.to_json())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let spec = build_spec(&p, &args.box_args, Method::Grid)?;
    let opts = design_options(&p, args.resolution, None, None)?;
    grid_points(&spec, opts.resolution)?;
    let result = design(&spec, &opts).map_err(classify_design)?;
    report_summary(&result);
    let rows = result.sweep_table.as_deref().unwrap_or(&[]);
    match &args.problem.output {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
            write_sweep_csv(f, &result.param_names, rows)
        }
        None => write_sweep_csv(std::io::stdout().lock(), &result.param_names, rows),
    }
}

#[derive(Debug, Serialize)]
struct TableRow {
    kappa: f64,
    algorithm: String,
    family: String,
    theta: BTreeMap<String, f64>,
    analytic_rho: f64,
    certified_rho: Option<f64>,
    difference: Option<f64>,
    status: String,
}

fn table_rows(kappa: f64, eps: f64) -> Result<Vec<TableRow>> {
    let fc = FunctionClass::from_kappa(kappa)?;
    let (m, l) = (fc.m, fc.l);
    let sk = kappa.sqrt();
    let q = (3.0 * kappa + 1.0).sqrt();
    let hb = (sk - 1.0) / (sk + 1.0);
    // (label, family, θ, analytic rate, certified on F(m, L))
    let rows: Vec<(&str, &str, Vec<f64>, f64, bool)> = vec![
        ("gradient (strongly convex)", "gradient", vec![1.0 / l], 1.0 - 1.0 / kappa, true),
        ("gradient (strongly convex)", "gradient", vec![2.0 / (m + l)], (kappa - 1.0) / (kappa + 1.0), true),
        ("nesterov (strongly convex)", "nesterov", vec![1.0 / l, hb], (1.0 - 1.0 / sk).sqrt(), true),
        ("nesterov (quadratics)", "nesterov", vec![4.0 / (3.0 * l + m), (q - 2.0) / (q + 2.0)], 1.0 - 2.0 / q, false),
        ("heavy-ball (quadratics)", "heavy_ball", vec![4.0 / (l.sqrt() + m.sqrt()).powi(2), hb * hb], hb, false),
    ];
    let registry = FamilyRegistry::with_builtins();
    let mut out = Vec::new();
    for (label, fam, theta, analytic, certify) in rows {
        let family = registry.get(fam)?;
        let (certified, status) = if certify {
            let prob = CertificateProblem::new(family.clone(), fc);
            match certify_rate(&prob, &theta, eps) {
                Ok(r) => (Some(r.rho_star), "certified".to_string()),
                Err(AnalysisError::NeverFeasible) => (None, "never-feasible".to_string()),
                Err(e) => return Err(e.into()),
            }
        } else {
            (None, "analytic-reference".to_string())
        };
        out.push(TableRow {
            kappa,
            algorithm: label.to_string(),
            family: fam.to_string(),
            theta: named(family.as_ref(), &theta),
            analytic_rho: analytic,
            certified_rho: certified,
            difference: certified.map(|c| c - analytic),
            status,
        });
    }
    Ok(out)
}

fn cmd_table(args: &TableArgs) -> Result<()> {
    let eps = args.eps.unwrap_or(DEFAULT_EPS);
    let mut rows = Vec::new();
    for &k in &args.kappa {
        if !(k >= 1.0) {
            bail!("kappa must be at least 1, got {k}");
        }
        rows.extend(table_rows(k, eps)?);
    }
    let text = match args.format.as_str() {
        "json" => serde_json::to_string_pretty(&rows)?,
        "text" => {
            let mut s = format!(
                "{:>8}  {:<28} {:>10} {:>10} {:>11}  {}\n",
                "kappa", "algorithm", "analytic", "certified", "difference", "status"
            );
            for r in &rows {
                let c = r.certified_rho.map_or("-".to_string(), |v| format!("{v:.6}"));
                let d = r.difference.map_or("-".to_string(), |v| format!("{v:+.2e}"));
                s += &format!(
                    "{:>8}  {:<28} {:>10.6} {:>10} {:>11}  {}\n",
                    r.kappa, r.algorithm, r.analytic_rho, c, d, r.status
                );
            }
            s
        }
        other => bail!("unknown format '{other}' (text or json)"),
    };
    write_output(&args.output, &text)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let p = load_problem(&args.problem)?;
    let theta = resolve_theta(&p, &args.theta)?;
    let o = &p.file.options;
    let dim = args.dim.or(o.dim).unwrap_or(2);
    let steps = args.steps.or(o.steps).unwrap_or(100);
    if dim == 0 {
        bail!("dimension must be positive");
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(p.seed);
    let f: Box<dyn Objective> = match args.objective.as_deref().or(o.objective.as_deref()).unwrap_or("quadratic") {
        "quadratic" => Box::new(Quadratic::random(&p.fc, dim, &mut rng)),
        "logsumexp" | "log-sum-exp" => Box::new(LogSumExp::random(&p.fc, dim, dim + 2, &mut rng)),
        other => bail!("unknown objective '{other}' (quadratic or logsumexp)"),
    };
    let n = p.family.state_dim();
    let xi0: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let traj = simulate(p.family.as_ref(), &theta, f.as_ref(), &xi0, steps)?;
    let xs = full_fixed_point(&p.family.matrices(&theta)?.fixed_point()?, f.minimizer());
    let lyap = if args.certify {
        let prob = CertificateProblem::new(p.family.clone(), p.fc);
        let a = certify_rate(&prob, &theta, DEFAULT_EPS).map_err(classify_analysis)?;
        eprintln!("certified rho {:.6}", a.rho_star);
        Some(lyapunov_values(&traj, &a.certificate.p, &xs)?)
    } else {
        None
    };
    let mut buf = Vec::new();
    {
        let mut wr = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["k", "objective_gap", "state_distance"];
        if lyap.is_some() {
            header.push("lyapunov");
        }
        wr.write_record(&header)?;
        for (k, s) in traj.states.iter().enumerate() {
            let dist = s.iter().zip(&xs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let mut rec = vec![k.to_string(), format!("{}", traj.objective_gaps[k]), format!("{dist}")];
            if let Some(v) = &lyap {
                rec.push(format!("{}", v[k]));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
    }
    write_output(&args.problem.output, std::str::from_utf8(&buf)?)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Design(a) => cmd_design(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Table(a) => cmd_table(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Uncertifiable>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed the pipe (e.g. `| head`)
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
