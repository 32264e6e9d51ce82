use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Value};

use wdr_core::ambiguity::WassersteinBall;
use wdr_core::bench::{
    build_material_order, build_portfolio, generate_gaussian_samples, run_experiment, ExperimentConfig,
    MaterialOrder, ReturnEstimator, SyntheticMarket,
};
use wdr_core::conic::{write_text, SolverOptions};
use wdr_core::constraint_dr::{
    build_mp, constraint_generation_solve, enumerate_vertices, solve_corollary_direct, CgOptions, CgResult,
    DualPolyhedron, EnumerationLimits, InnerSolver, VertexSet,
};
use wdr_core::objective_dr::{build_objective_dr, solve_objective_dr, RecourseCoupling};
use wdr_core::problem::io::{load_problem, load_samples, save_problem, save_samples};
use wdr_core::problem::{SampleSet, TwoStageProblem, UncertaintySite};
use wdr_core::worst_case::{verify_worst_case, worst_case_constraint, worst_case_objective, AscentOptions};
use wdr_core::Norm;

/// Wasserstein distributionally robust two-stage linear programs.
///
/// Solver tolerances and the iteration cap can be overridden with WDR_TOL
/// and WDR_MAX_ITER; WDR_THREADS sets the worker count.
#[derive(Parser)]
#[command(name = "wdr", version)]
struct Cli {
    /// Worker threads for sample-parallel work.
    #[arg(long, global = true, env = "WDR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep described by a JSON config.
    Run(RunArgs),
    /// Solve one robust problem.
    Solve(SolveArgs),
    /// Build a worst-case distribution for a first-stage decision.
    WorstCase(WorstCaseArgs),
    /// Write the lower/upper bound trace of constraint generation as CSV.
    Trace(TraceArgs),
    /// Draw samples for a built-in instance.
    Samples(SamplesArgs),
    /// Write a built-in instance as a problem file.
    Instance(InstanceArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for records.csv and report.json; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// First-stage return estimator for the portfolio experiment.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SiteArg {
    Objective,
    Constraints,
}

#[derive(Clone, Copy, ValueEnum)]
enum InnerArg {
    Exact,
    Admm,
    Fallback,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    PerSample,
    Shared,
}

#[derive(Args)]
struct ModelArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Samples, one per row (CSV).
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Ground norm of the transport cost: l1, l2 or linf.
    #[arg(long, default_value = "l2", value_parser = parse_norm)]
    norm: Norm,
    /// Expected uncertainty site; checked against the problem file.
    #[arg(long, value_enum)]
    site: Option<SiteArg>,
}

#[derive(Args)]
struct CgArgs {
    /// Inner maximizer of constraint generation.
    #[arg(long, value_enum, default_value = "fallback")]
    inner: InnerArg,
    /// Relative gap at which constraint generation stops.
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Constraint generation (default for the constraint site).
    #[arg(long, conflicts_with = "direct")]
    cg: bool,
    /// One solve over every vertex of the dual polyhedron.
    #[arg(long)]
    direct: bool,
    #[command(flatten)]
    cg_args: CgArgs,
    #[arg(long, value_enum, default_value = "per-sample")]
    coupling: CouplingArg,
    /// Write the canonical conic program as text.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WorstCaseArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated first-stage decision; solved for when omitted.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Ascent iterations (objective site).
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    cg_args: CgArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InstanceKind {
    MaterialOrder,
    HighDim,
    Portfolio,
}

#[derive(Args)]
struct SamplesArgs {
    #[arg(long, value_enum)]
    instance: InstanceKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, value_enum)]
    instance: InstanceKind,
    /// Proportional transaction cost (portfolio only).
    #[arg(long)]
    theta: Option<f64>,
    /// Returns whose mean or sum sets the first-stage returns (portfolio
    /// only); the synthetic market mean is used when omitted.
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mean")]
    estimator: EstimatorArg,
    #[arg(long)]
    out: PathBuf,
}

fn parse_norm(s: &str) -> std::result::Result<Norm, String> {
    Norm::parse(s).ok_or_else(|| format!("unknown norm `{s}`; use l1, l2 or linf"))
}

impl From<EstimatorArg> for ReturnEstimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Mean => ReturnEstimator::Mean,
            EstimatorArg::Sum => ReturnEstimator::Sum,
        }
    }
}

struct Loaded {
    problem: TwoStageProblem,
    samples: SampleSet,
    ball: WassersteinBall,
}

impl ModelArgs {
    fn load(&self) -> Result<Loaded> {
        let problem = load_problem(&self.problem).with_context(|| format!("reading {}", self.problem.display()))?;
        let samples = load_samples(&self.samples).with_context(|| format!("reading {}", self.samples.display()))?;
        if let Some(site) = self.site {
            let expected = match site {
                SiteArg::Objective => UncertaintySite::Objective,
                SiteArg::Constraints => UncertaintySite::Constraints,
            };
            if expected != problem.site {
                bail!("--site does not match the problem file, which has {:?} uncertainty", problem.site);
            }
        }
        let ball = WassersteinBall::with_radius(self.epsilon, self.norm)?;
        Ok(Loaded { problem, samples, ball })
    }
}

impl CgArgs {
    fn options(&self, solver: SolverOptions) -> CgOptions {
        CgOptions {
            gap_tol: self.gap_tol,
            inner: match self.inner {
                InnerArg::Exact => InnerSolver::Exact,
                InnerArg::Admm => InnerSolver::Admm,
                InnerArg::Fallback => InnerSolver::AdmmThenExactFallback,
            },
            max_iter: self.max_iter,
            solver,
            ..CgOptions::default()
        }
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn all_vertices(problem: &TwoStageProblem) -> Result<VertexSet> {
    Ok(enumerate_vertices(&DualPolyhedron::from_problem(problem)?, &EnumerationLimits::default())?)
}

fn cg_json(r: &CgResult) -> Value {
    json!({
        "x": vec_json(&r.x),
        "objective": r.objective,
        "status": format!("{:?}", r.status),
        "lower_bound": r.state.lb,
        "upper_bound": r.state.ub,
        "iterations": r.state.iteration,
        "vertices": r.state.vertices.len(),
        "inner_exact": r.inner_exact,
        "admm_shortfalls": r.state.admm_shortfalls,
    })
}

fn dump_program(path: &Path, program: &wdr_core::conic::ConicProgram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_text(program, &mut w)?;
    w.flush()?;
    Ok(())
}

fn solve(args: &SolveArgs, solver: SolverOptions) -> Result<()> {
    let Loaded { problem, samples, ball } = args.model.load()?;
    let result = match problem.site {
        UncertaintySite::Objective => {
            if args.cg || args.direct {
                bail!("--cg and --direct apply to constraint uncertainty only");
            }
            let coupling = match args.coupling {
                CouplingArg::PerSample => RecourseCoupling::PerSample,
                CouplingArg::Shared => RecourseCoupling::Shared,
            };
            if let Some(path) = &args.dump {
                dump_program(path, &build_objective_dr(&problem, &samples, &ball, coupling)?.program)?;
            }
            let s = solve_objective_dr(&problem, &samples, &ball, coupling, &solver)?;
            json!({
                "x": vec_json(&s.x),
                "objective": s.objective,
                "beta": s.beta,
                "lambda": s.lambda,
                "s": vec_json(&s.s),
                "ys": s.ys.iter().map(vec_json).collect::<Vec<_>>(),
                "solver_iterations": s.iterations,
                "solve_seconds": s.solve_seconds,
            })
        }
        UncertaintySite::Constraints if args.direct => {
            let verts = all_vertices(&problem)?;
            if let Some(path) = &args.dump {
                dump_program(path, &build_mp(&problem, &samples, &ball, &verts)?.program)?;
            }
            let s = solve_corollary_direct(&problem, &samples, &ball, &verts, &solver)?;
            json!({
                "x": vec_json(&s.x),
                "objective": s.objective,
                "beta": s.beta,
                "lambda": s.lambda,
                "vertices": verts.len(),
                "solver_iterations": s.iterations,
                "solve_seconds": s.solve_seconds,
            })
        }
        UncertaintySite::Constraints => {
            let r = constraint_generation_solve(&problem, &samples, &ball, &args.cg_args.options(solver))?;
            if let Some(path) = &args.dump {
                dump_program(path, &build_mp(&problem, &samples, &ball, &r.state.vertices)?.program)?;
            }
            cg_json(&r)
        }
    };
    emit(&result, args.out.as_deref())
}

fn worst_case(args: &WorstCaseArgs, solver: SolverOptions) -> Result<()> {
    let Loaded { problem, samples, ball } = args.model.load()?;
    let x = match &args.x {
        Some(x) => DVector::from_vec(x.clone()),
        None => match problem.site {
            UncertaintySite::Objective => {
                solve_objective_dr(&problem, &samples, &ball, RecourseCoupling::PerSample, &solver)?.x
            }
            UncertaintySite::Constraints => {
                let opts = CgOptions {
                    solver,
                    ..CgOptions::default()
                };
                constraint_generation_solve(&problem, &samples, &ball, &opts)?.x
            }
        },
    };
    let report = match problem.site {
        UncertaintySite::Objective => {
            let opts = AscentOptions {
                max_iter: args.max_iter,
                solver,
                ..AscentOptions::default()
            };
            worst_case_objective(&problem, &x, &samples, &ball, &opts)?
        }
        UncertaintySite::Constraints => worst_case_constraint(&problem, &x, &samples, &ball, &all_vertices(&problem)?)?,
    };
    let verdict = verify_worst_case(&report, &samples, &ball, &problem, &x)?;
    emit(
        &json!({ "x": vec_json(&x), "report": report, "verdict": verdict }),
        args.out.as_deref(),
    )
}

fn trace(args: &TraceArgs, solver: SolverOptions) -> Result<()> {
    let Loaded { problem, samples, ball } = args.model.load()?;
    let r = constraint_generation_solve(&problem, &samples, &ball, &args.cg_args.options(solver))?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    r.state.write_trace_csv(BufWriter::new(file))?;
    eprintln!(
        "{} iterations, {} vertices, gap {:.3e}, status {:?}",
        r.state.iteration,
        r.state.vertices.len(),
        r.state.gap(),
        r.status
    );
    Ok(())
}

fn samples(args: &SamplesArgs) -> Result<()> {
    let set = match args.instance {
        InstanceKind::MaterialOrder => {
            generate_gaussian_samples(&[0.0; 4], &MaterialOrder::two_dim_variance(), args.n, args.seed)?
        }
        InstanceKind::HighDim => {
            let var = MaterialOrder::high_dim_variance();
            generate_gaussian_samples(&vec![0.0; var.len()], &var, args.n, args.seed)?
        }
        InstanceKind::Portfolio => SyntheticMarket::default().sample(args.n, args.seed)?,
    };
    save_samples(&set, &args.out)?;
    Ok(())
}

fn instance(args: &InstanceArgs) -> Result<()> {
    let problem = match args.instance {
        InstanceKind::MaterialOrder => build_material_order(&MaterialOrder::two_dim())?,
        InstanceKind::HighDim => build_material_order(&MaterialOrder::high_dim())?,
        InstanceKind::Portfolio => {
            let theta = args.theta.context("the portfolio instance needs --theta")?;
            let c = match &args.returns {
                Some(path) => ReturnEstimator::from(args.estimator).estimate(&load_samples(path)?),
                None => SyntheticMarket::default().mean_vector(),
            };
            build_portfolio(theta, &c)?
        }
    };
    save_problem(&problem, &args.out)?;
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config =
        ExperimentConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    if let (Some(e), Some(p)) = (args.estimator, config.portfolio.as_mut()) {
        p.estimator = e.into();
    }
    let report = run_experiment(&config)?;
    let mut out = io::stdout().lock();
    writeln!(out, "epsilon,n_train,completed,in_sample,out_of_sample,saa_out_of_sample,pct_diff,dr_no_worse,cg_iterations,cg_vertices")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    for a in &report.aggregates {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.4},{:.3},{},{}",
            a.epsilon,
            a.n_train,
            a.completed,
            a.in_sample,
            a.out_of_sample,
            a.saa_out_of_sample,
            a.percentage_difference,
            a.dr_no_worse,
            opt(a.cg_iterations),
            opt(a.cg_vertices)
        )?;
    }
    let failed = report.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} records failed; see the error column", report.records.len());
    }
    if !report.tuned.is_empty() {
        let ok: Vec<_> = report.tuned.iter().filter(|t| t.out_of_sample.is_some()).collect();
        let no_worse = ok
            .iter()
            .filter(|t| t.out_of_sample.unwrap() <= t.saa_out_of_sample.unwrap_or(f64::INFINITY))
            .count();
        eprintln!("tuned radius: robust decision no worse than SAA in {no_worse}/{} trials", ok.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let solver = SolverOptions::from_env();
    match &cli.command {
        Command::Run(a) => run(a),
        Command::Solve(a) => solve(a, solver),
        Command::WorstCase(a) => worst_case(a, solver),
        Command::Trace(a) => trace(a, solver),
        Command::Samples(a) => samples(a),
        Command::Instance(a) => instance(a),
    }
}
