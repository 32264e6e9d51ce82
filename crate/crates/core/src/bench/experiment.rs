use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_material_order, build_portfolio, generate_gaussian_samples, out_of_sample, percentage_difference};
use super::{MaterialOrder, SyntheticMarket};
use crate::ambiguity::WassersteinBall;
use crate::conic::SolverOptions;
use crate::constraint_dr::{
    constraint_generation_solve, enumerate_vertices, solve_corollary_direct, CgOptions, CgStatus, DualPolyhedron,
};
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::objective_dr::{solve_objective_dr, RecourseCoupling};
use crate::problem::io::{load_problem, load_samples};
use crate::problem::{saa_solve, SampleSet, TwoStageProblem, UncertaintySite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Portfolio,
    MaterialOrder,
    HighDim,
    Custom,
}

/// How constraint-site problems are solved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMethod {
    /// Constraint generation.
    #[default]
    Cg,
    /// One solve over all enumerated vertices.
    Direct,
}

/// How the first-stage returns of the portfolio are estimated from the
/// training returns of a trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnEstimator {
    #[default]
    Mean,
    Sum,
}

impl ReturnEstimator {
    pub fn estimate(self, train: &SampleSet) -> DVector<f64> {
        match self {
            ReturnEstimator::Mean => train.mean(),
            ReturnEstimator::Sum => train.mean() * train.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub theta: f64,
    #[serde(default)]
    pub market: SyntheticMarket,
    /// Fixed first-stage returns; when absent they are estimated from each
    /// training set with `estimator`.
    #[serde(default)]
    pub first_stage_return: Option<Vec<f64>>,
    #[serde(default)]
    pub estimator: ReturnEstimator,
    /// Historical returns to draw training and test sets from instead of
    /// the synthetic market.
    #[serde(default)]
    pub returns_csv: Option<PathBuf>,
    /// Folds for choosing ε from the grid on the training data; `0` skips it.
    #[serde(default)]
    pub tune_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    pub problem: PathBuf,
    /// Training sets are drawn from these rows without replacement.
    pub samples: PathBuf,
    /// Test rows; defaults to draws from `samples`.
    #[serde(default)]
    pub test_samples: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_train: Vec<usize>,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub cg: CgOptions,
    #[serde(default)]
    pub method: ConstraintMethod,
    #[serde(default)]
    pub portfolio: Option<PortfolioSpec>,
    /// Sampling law for the material order experiments.
    #[serde(default)]
    pub gaussian: Option<GaussianSpec>,
    /// Replaces the built-in material order coefficients.
    #[serde(default)]
    pub material: Option<MaterialOrder>,
    #[serde(default)]
    pub custom: Option<CustomSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train.is_empty() || self.n_train.contains(&0) {
            return Err(Error::Input("n_train must list positive sample sizes".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Input("n_test must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Input("trials must be at least 1".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Input("epsilons must be finite and nonnegative".into()));
        }
        match self.experiment {
            Experiment::Portfolio if self.portfolio.is_none() => {
                Err(Error::Input("the portfolio experiment needs a `portfolio` block with theta".into()))
            }
            Experiment::Custom if self.custom.is_none() => {
                Err(Error::Input("the custom experiment needs a `custom` block".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Result of one distributionally robust solve.
#[derive(Debug, Clone, Serialize)]
pub struct DrOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub cg_iterations: Option<usize>,
    pub cg_vertices: Option<usize>,
    pub converged: bool,
}

pub fn solve_dr(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    method: ConstraintMethod,
    cg: &CgOptions,
    solver: &SolverOptions,
) -> Result<DrOutcome> {
    match problem.site {
        UncertaintySite::Objective => {
            let s = solve_objective_dr(problem, samples, ball, RecourseCoupling::PerSample, solver)?;
            Ok(DrOutcome {
                x: s.x,
                objective: s.objective,
                cg_iterations: None,
                cg_vertices: None,
                converged: true,
            })
        }
        UncertaintySite::Constraints => match method {
            ConstraintMethod::Cg => {
                let opts = CgOptions { solver: *solver, ..*cg };
                let r = constraint_generation_solve(problem, samples, ball, &opts)?;
                Ok(DrOutcome {
                    x: r.x,
                    objective: r.objective,
                    cg_iterations: Some(r.state.iteration),
                    cg_vertices: Some(r.state.vertices.len()),
                    converged: r.status == CgStatus::Converged,
                })
            }
            ConstraintMethod::Direct => {
                let poly = DualPolyhedron::from_problem(problem)?;
                let all = enumerate_vertices(&poly, &cg.enumeration)?;
                let s = solve_corollary_direct(problem, samples, ball, &all, solver)?;
                Ok(DrOutcome {
                    x: s.x,
                    objective: s.objective,
                    cg_iterations: None,
                    cg_vertices: Some(all.len()),
                    converged: true,
                })
            }
        },
    }
}

/// Picks the radius from `grid` with the lowest mean held-out cost over
/// `folds` contiguous folds of `train`. Returns the radius and the score of
/// every grid point; ties go to the smaller radius.
#[allow(clippy::too_many_arguments)]
pub fn tune_epsilon(
    problem: &TwoStageProblem,
    train: &SampleSet,
    grid: &[f64],
    folds: usize,
    norm: Norm,
    method: ConstraintMethod,
    cg: &CgOptions,
    solver: &SolverOptions,
) -> Result<(f64, Vec<f64>)> {
    let n = train.len();
    if folds < 2 || folds > n {
        return Err(Error::Input(format!("need 2 <= folds <= {n}, got {folds}")));
    }
    if grid.is_empty() {
        return Err(Error::Input("empty radius grid".into()));
    }
    let splits: Vec<(SampleSet, SampleSet)> = (0..folds)
        .map(|f| {
            let lo = f * n / folds;
            let hi = (f + 1) * n / folds;
            let fit = train.iter().enumerate().filter(|(i, _)| *i < lo || *i >= hi).map(|(_, s)| s.clone());
            let hold = train.samples()[lo..hi].to_vec();
            Ok((SampleSet::new(fit.collect())?, SampleSet::new(hold)?))
        })
        .collect::<Result<_>>()?;
    let mut scores = Vec::with_capacity(grid.len());
    for &eps in grid {
        let ball = WassersteinBall::with_radius(eps, norm)?;
        let mut total = 0.0;
        for (fit, hold) in &splits {
            let sol = solve_dr(problem, fit, &ball, method, cg, solver)?;
            total += out_of_sample(problem, &sol.x, hold)?.value;
        }
        scores.push(total / folds as f64);
    }
    let best = (0..grid.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    Ok((grid[best], scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub epsilon: f64,
    pub n_train: usize,
    pub trial: usize,
    pub in_sample: Option<f64>,
    pub out_of_sample: Option<f64>,
    pub first_stage_cost: Option<f64>,
    pub saa_in_sample: Option<f64>,
    pub saa_out_of_sample: Option<f64>,
    /// `(DR / SAA - 1) · 100` on the test set.
    pub percentage_difference: Option<f64>,
    pub x: Vec<f64>,
    pub wall_seconds: f64,
    pub cg_iterations: Option<usize>,
    pub cg_vertices: Option<usize>,
    pub converged: Option<bool>,
    /// Test samples without a feasible recourse.
    pub excluded: usize,
    pub error: Option<String>,
}

/// One record per sample size and trial with the radius chosen on the
/// training data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunedRecord {
    pub n_train: usize,
    pub trial: usize,
    pub epsilon: Option<f64>,
    pub out_of_sample: Option<f64>,
    pub saa_out_of_sample: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub epsilon: f64,
    pub n_train: usize,
    /// Trials without a solve failure.
    pub completed: usize,
    pub in_sample: f64,
    pub out_of_sample: f64,
    pub saa_out_of_sample: f64,
    pub percentage_difference: f64,
    /// Fraction of trials where the robust decision did no worse on the
    /// test set.
    pub dr_no_worse: f64,
    pub x: Vec<f64>,
    pub cg_iterations: Option<f64>,
    pub cg_vertices: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub records: Vec<ExperimentRecord>,
    pub aggregates: Vec<Aggregate>,
    pub tuned: Vec<TunedRecord>,
}

impl ExperimentReport {
    pub fn write_records_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "epsilon",
            "n_train",
            "trial",
            "in_sample",
            "out_of_sample",
            "first_stage_cost",
            "saa_in_sample",
            "saa_out_of_sample",
            "percentage_difference",
            "x",
            "wall_seconds",
            "cg_iterations",
            "cg_vertices",
            "converged",
            "excluded",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let x = r.x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([
                r.epsilon.to_string(),
                r.n_train.to_string(),
                r.trial.to_string(),
                opt(r.in_sample),
                opt(r.out_of_sample),
                opt(r.first_stage_cost),
                opt(r.saa_in_sample),
                opt(r.saa_out_of_sample),
                opt(r.percentage_difference),
                x,
                r.wall_seconds.to_string(),
                r.cg_iterations.map(|v| v.to_string()).unwrap_or_default(),
                r.cg_vertices.map(|v| v.to_string()).unwrap_or_default(),
                r.converged.map(|v| v.to_string()).unwrap_or_default(),
                r.excluded.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `records.csv` and `report.json` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_records_csv(fs::File::create(dir.join("records.csv"))?)?;
        let json = serde_json::json!({ "aggregates": self.aggregates, "tuned": self.tuned });
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }
}

enum Source {
    Gaussian(Vec<f64>, Vec<f64>),
    Market(SyntheticMarket),
    Rows { train: SampleSet, test: Option<SampleSet> },
}

impl Source {
    fn draw(&self, n: usize, n_test: usize, seed: u64) -> Result<(SampleSet, SampleSet)> {
        match self {
            Source::Gaussian(mean, var) => Ok((
                generate_gaussian_samples(mean, var, n, seed)?,
                generate_gaussian_samples(mean, var, n_test, seed ^ 0x9e37_79b9_7f4a_7c15)?,
            )),
            Source::Market(m) => Ok((m.sample(n, seed)?, m.sample(n_test, seed ^ 0x9e37_79b9_7f4a_7c15)?)),
            Source::Rows { train, test } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match test {
                    Some(test) => Ok((pick(train, n, &mut rng)?, pick(test, n_test, &mut rng)?)),
                    None => {
                        if n + n_test > train.len() {
                            return Err(Error::Input(format!(
                                "{} rows cannot provide {n} training and {n_test} test samples",
                                train.len()
                            )));
                        }
                        let idx = sample_indices(&mut rng, train.len(), n + n_test).into_vec();
                        let rows = |ix: &[usize]| SampleSet::new(ix.iter().map(|&i| train.samples()[i].clone()).collect());
                        Ok((rows(&idx[..n])?, rows(&idx[n..])?))
                    }
                }
            }
        }
    }
}

fn pick(rows: &SampleSet, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleSet> {
    if n > rows.len() {
        return Err(Error::Input(format!("{} rows cannot provide {n} samples", rows.len())));
    }
    let idx = sample_indices(rng, rows.len(), n);
    SampleSet::new(idx.iter().map(|i| rows.samples()[i].clone()).collect())
}

fn setup(config: &ExperimentConfig) -> Result<(TwoStageProblem, Source)> {
    let gaussian = |default_var: Vec<f64>| match &config.gaussian {
        Some(g) => Source::Gaussian(g.mean.clone(), g.variance.clone()),
        None => Source::Gaussian(vec![0.0; default_var.len()], default_var),
    };
    Ok(match config.experiment {
        Experiment::Portfolio => {
            let spec = config.portfolio.as_ref().expect("validated");
            let source = match &spec.returns_csv {
                Some(path) => Source::Rows {
                    train: load_samples(path)?,
                    test: None,
                },
                None => Source::Market(spec.market.clone()),
            };
            // replaced per trial unless the returns are fixed
            let c = match (&spec.first_stage_return, &source) {
                (Some(c), _) => DVector::from_vec(c.clone()),
                (None, Source::Rows { train, .. }) => spec.estimator.estimate(train),
                (None, _) => spec.market.mean_vector(),
            };
            (build_portfolio(spec.theta, &c)?, source)
        }
        Experiment::MaterialOrder => {
            let spec = config.material.clone().unwrap_or_else(MaterialOrder::two_dim);
            (build_material_order(&spec)?, gaussian(MaterialOrder::two_dim_variance()))
        }
        Experiment::HighDim => {
            let spec = config.material.clone().unwrap_or_else(MaterialOrder::high_dim);
            (build_material_order(&spec)?, gaussian(MaterialOrder::high_dim_variance()))
        }
        Experiment::Custom => {
            let spec = config.custom.as_ref().expect("validated");
            let problem = load_problem(&spec.problem)?;
            let train = load_samples(&spec.samples)?;
            let test = spec.test_samples.as_ref().map(load_samples).transpose()?;
            (problem, Source::Rows { train, test })
        }
    })
}

fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add((n as u64) << 32)
        .wrapping_add(trial as u64)
}

struct TrialOutput {
    records: Vec<ExperimentRecord>,
    tuned: Option<TunedRecord>,
}

fn run_trial(config: &ExperimentConfig, problem: &TwoStageProblem, source: &Source, n: usize, trial: usize) -> TrialOutput {
    let blank = |epsilon: f64, error: String| ExperimentRecord {
        epsilon,
        n_train: n,
        trial,
        in_sample: None,
        out_of_sample: None,
        first_stage_cost: None,
        saa_in_sample: None,
        saa_out_of_sample: None,
        percentage_difference: None,
        x: Vec::new(),
        wall_seconds: 0.0,
        cg_iterations: None,
        cg_vertices: None,
        converged: None,
        excluded: 0,
        error: Some(error),
    };
    let fail_all = |e: Error| TrialOutput {
        records: config.epsilons.iter().map(|&eps| blank(eps, e.to_string())).collect(),
        tuned: None,
    };
    let (train, test) = match source.draw(n, config.n_test, trial_seed(config.seed, n, trial)) {
        Ok(d) => d,
        Err(e) => return fail_all(e),
    };
    let estimated;
    let problem = match &config.portfolio {
        Some(spec) if config.experiment == Experiment::Portfolio && spec.first_stage_return.is_none() => {
            match build_portfolio(spec.theta, &spec.estimator.estimate(&train)) {
                Ok(p) => {
                    estimated = p;
                    &estimated
                }
                Err(e) => return fail_all(e),
            }
        }
        _ => problem,
    };
    let saa = match saa_solve(problem, &train, &config.solver).and_then(|s| {
        let oos = out_of_sample(problem, &s.x, &test)?;
        Ok((s, oos))
    }) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let records = config
        .epsilons
        .iter()
        .map(|&eps| {
            let start = Instant::now();
            let result = WassersteinBall::with_radius(eps, config.norm)
                .and_then(|ball| solve_dr(problem, &train, &ball, config.method, &config.cg, &config.solver))
                .and_then(|sol| {
                    let oos = out_of_sample(problem, &sol.x, &test)?;
                    Ok((sol, oos))
                });
            match result {
                Ok((sol, oos)) => ExperimentRecord {
                    epsilon: eps,
                    n_train: n,
                    trial,
                    in_sample: Some(sol.objective),
                    out_of_sample: Some(oos.value),
                    first_stage_cost: Some(problem.c.dot(&sol.x)),
                    saa_in_sample: Some(saa.0.value),
                    saa_out_of_sample: Some(saa.1.value),
                    percentage_difference: Some(percentage_difference(oos.value, saa.1.value)),
                    x: sol.x.iter().copied().collect(),
                    wall_seconds: start.elapsed().as_secs_f64(),
                    cg_iterations: sol.cg_iterations,
                    cg_vertices: sol.cg_vertices,
                    converged: Some(sol.converged),
                    excluded: oos.excluded,
                    error: None,
                },
                Err(e) => blank(eps, e.to_string()),
            }
        })
        .collect();
    let folds = config.portfolio.as_ref().map_or(0, |p| p.tune_folds);
    let tuned = (folds > 0).then(|| {
        let result = tune_epsilon(problem, &train, &config.epsilons, folds, config.norm, config.method, &config.cg, &config.solver)
            .and_then(|(eps, _)| {
                let ball = WassersteinBall::with_radius(eps, config.norm)?;
                let sol = solve_dr(problem, &train, &ball, config.method, &config.cg, &config.solver)?;
                Ok((eps, out_of_sample(problem, &sol.x, &test)?.value))
            });
        match result {
            Ok((eps, oos)) => TunedRecord {
                n_train: n,
                trial,
                epsilon: Some(eps),
                out_of_sample: Some(oos),
                saa_out_of_sample: Some(saa.1.value),
                error: None,
            },
            Err(e) => TunedRecord {
                n_train: n,
                trial,
                epsilon: None,
                out_of_sample: None,
                saa_out_of_sample: Some(saa.1.value),
                error: Some(e.to_string()),
            },
        }
    });
    TrialOutput { records, tuned }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn aggregate(config: &ExperimentConfig, records: &[ExperimentRecord]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &eps in &config.epsilons {
        for &n in &config.n_train {
            let ok: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.epsilon == eps && r.n_train == n && r.error.is_none())
                .collect();
            let dim = ok.first().map_or(0, |r| r.x.len());
            let opt_mean = |f: fn(&ExperimentRecord) -> Option<usize>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r).map(|v| v as f64)).collect();
                (!v.is_empty()).then(|| mean(v.into_iter()))
            };
            out.push(Aggregate {
                epsilon: eps,
                n_train: n,
                completed: ok.len(),
                in_sample: mean(ok.iter().filter_map(|r| r.in_sample)),
                out_of_sample: mean(ok.iter().filter_map(|r| r.out_of_sample)),
                saa_out_of_sample: mean(ok.iter().filter_map(|r| r.saa_out_of_sample)),
                percentage_difference: mean(ok.iter().filter_map(|r| r.percentage_difference)),
                dr_no_worse: mean(ok.iter().map(|r| {
                    let (dr, saa) = (r.out_of_sample.unwrap_or(f64::NAN), r.saa_out_of_sample.unwrap_or(f64::NAN));
                    if dr <= saa + 1e-9 * saa.abs().max(1.0) {
                        1.0
                    } else {
                        0.0
                    }
                })),
                x: (0..dim).map(|j| mean(ok.iter().map(|r| r.x[j]))).collect(),
                cg_iterations: opt_mean(|r| r.cg_iterations),
                cg_vertices: opt_mean(|r| r.cg_vertices),
                wall_seconds: mean(ok.iter().map(|r| r.wall_seconds)),
            });
        }
    }
    out
}

/// Sweeps radii, sample sizes and trials. Training and test sets depend
/// only on the seed, sample size and trial, so every radius sees the same
/// data. Solve failures are recorded and the sweep continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (problem, source) = setup(config)?;
    let jobs: Vec<(usize, usize)> = config
        .n_train
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect();
    let outputs: Vec<TrialOutput> = jobs
        .par_iter()
        .map(|&(n, t)| run_trial(config, &problem, &source, n, t))
        .collect();
    let mut records = Vec::with_capacity(jobs.len() * config.epsilons.len());
    let mut tuned = Vec::new();
    for out in outputs {
        records.extend(out.records);
        tuned.extend(out.tuned);
    }
    let eps_index = |e: f64| config.epsilons.iter().position(|&v| v == e).unwrap_or(usize::MAX);
    let n_index = |n: usize| config.n_train.iter().position(|&v| v == n).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (eps_index(r.epsilon), n_index(r.n_train), r.trial));
    let aggregates = aggregate(config, &records);
    let report = ExperimentReport {
        records,
        aggregates,
        tuned,
    };
    if let Some(dir) = &config.output_dir {
        report.write_files(dir)?;
    }
    Ok(report)
}
