use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::master::LazyMaster;
use super::{
    enumerate_vertices, norm_max_admm, norm_max_exact, solve_sub_lps, AdmmOptions, DualPolyhedron,
    EnumerationLimits, VertexSet,
};
use crate::ambiguity::WassersteinBall;
use crate::conic::SolverOptions;
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::problem::{saa_solve, SampleSet, TwoStageProblem};

/// How `max_{p ∈ P} ||C(x_k) p||` is computed in each subproblem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSolver {
    /// Enumerate the vertices of `P` once and scan them.
    Exact,
    /// Consensus ADMM with vertex polishing (Euclidean dual norm only).
    Admm,
    /// ADMM, replaced by the exact value whenever `P` can be enumerated.
    #[default]
    AdmmThenExactFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgOptions {
    /// Stop when `UB - LB <= gap_tol * max(1, |UB|)`.
    pub gap_tol: f64,
    pub inner: InnerSolver,
    /// Defaults to `10 k + 50` for a `k`-dimensional dual polyhedron.
    pub max_iter: Option<usize>,
    pub admm: AdmmOptions,
    pub solver: SolverOptions,
    pub enumeration: EnumerationLimits,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            inner: InnerSolver::default(),
            max_iter: None,
            admm: AdmmOptions::default(),
            solver: SolverOptions::default(),
            enumeration: EnumerationLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CgTraceRow {
    pub iteration: usize,
    /// Best lower bound so far.
    pub lb: f64,
    /// Best upper bound so far.
    pub ub: f64,
    /// Master problem value at this iteration.
    pub mp_value: f64,
    /// Upper bound evaluated at this iteration's decision.
    pub sub_value: f64,
    pub num_vertices: usize,
    pub new_vertices: usize,
    pub inner_lambda: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CgState {
    pub vertices: VertexSet,
    pub lb: f64,
    pub ub: f64,
    pub iteration: usize,
    pub trace: Vec<CgTraceRow>,
    /// Iterations where ADMM fell short of the exact maximum.
    pub admm_shortfalls: usize,
    /// Master solves, counting the rounds that add rows on demand.
    pub master_solves: usize,
}

impl CgState {
    pub fn gap(&self) -> f64 {
        self.ub - self.lb
    }

    pub fn write_trace_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CgResult {
    /// Decision attaining the best upper bound.
    pub x: DVector<f64>,
    /// The best upper bound.
    pub objective: f64,
    pub status: CgStatus,
    /// Whether the inner maximization was exact in every iteration.
    pub inner_exact: bool,
    pub state: CgState,
}

struct Inner<'a> {
    poly: &'a DualPolyhedron,
    vertices: Option<VertexSet>,
    use_admm: bool,
    admm: AdmmOptions,
    norm: Norm,
}

impl Inner<'_> {
    // Returns (vertex, value, admm fell short).
    fn maximize(&self, c: &nalgebra::DMatrix<f64>) -> Result<(DVector<f64>, f64, bool)> {
        let admm = if self.use_admm {
            let r = norm_max_admm(c, self.poly, &self.admm)?;
            Some((r.p, r.lambda))
        } else {
            None
        };
        match (&self.vertices, admm) {
            (Some(all), admm) => {
                let exact = norm_max_exact(c, all, self.norm)?;
                let short = admm.is_some_and(|(_, v)| v < exact.lambda - 1e-9 * exact.lambda.max(1.0));
                Ok((exact.p, exact.lambda, short))
            }
            (None, Some((p, v))) => Ok((p, v, false)),
            (None, None) => unreachable!("inner solver has neither vertices nor ADMM"),
        }
    }
}

/// Master/subproblem constraint generation over vertices of the dual
/// polyhedron, seeded with the subproblem vertices at the sample average
/// solution.
pub fn constraint_generation_solve(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    opts: &CgOptions,
) -> Result<CgResult> {
    let start = Instant::now();
    let poly = DualPolyhedron::from_problem(problem)?;
    let dual = ball.norm.dual();
    let admm_ok = dual == Norm::L2;
    let enumerate = |poly: &DualPolyhedron| enumerate_vertices(poly, &opts.enumeration);
    let inner = match opts.inner {
        InnerSolver::Exact => Inner {
            poly: &poly,
            vertices: Some(enumerate(&poly)?),
            use_admm: false,
            admm: opts.admm,
            norm: dual,
        },
        InnerSolver::Admm => {
            if !admm_ok {
                return Err(Error::Input(
                    "the ADMM inner solver handles the Euclidean ground norm only".into(),
                ));
            }
            Inner {
                poly: &poly,
                vertices: None,
                use_admm: true,
                admm: opts.admm,
                norm: dual,
            }
        }
        InnerSolver::AdmmThenExactFallback => {
            let vertices = match enumerate(&poly) {
                Ok(v) => Some(v),
                Err(Error::EnumerationCap(_)) if admm_ok => None,
                Err(e) => return Err(e),
            };
            Inner {
                poly: &poly,
                vertices,
                use_admm: admm_ok,
                admm: opts.admm,
                norm: dual,
            }
        }
    };
    let inner_exact = inner.vertices.is_some();
    let max_iter = opts.max_iter.unwrap_or(10 * poly.dim() + 50);

    let saa = saa_solve(problem, samples, &opts.solver)?;
    let seed = solve_sub_lps(problem, &saa.x, samples, &poly)?;
    let mut state = CgState {
        vertices: seed.vertices.into_iter().collect(),
        lb: f64::NEG_INFINITY,
        ub: f64::INFINITY,
        ..Default::default()
    };
    let mut best_x = saa.x.clone();
    let mut master = LazyMaster::new(problem, samples)?;
    let mut status = CgStatus::NotConverged;

    for it in 1..=max_iter {
        state.iteration = it;
        let mp = master.solve(problem, ball, &state.vertices, &best_x, &opts.solver)?;
        state.lb = state.lb.max(mp.objective);
        state.master_solves = master.rounds;

        let sub = solve_sub_lps(problem, &mp.x, samples, &poly)?;
        let c = problem.uncertainty.c_matrix(&mp.x);
        let mut candidates: Vec<DVector<f64>> = sub.vertices;
        let mut lambda = 0.0;
        if !ball.is_degenerate() {
            let (p, v, short) = inner.maximize(&c)?;
            state.admm_shortfalls += short as usize;
            lambda = v;
            candidates.push(p);
            // never below what the master already accounts for
            lambda = state
                .vertices
                .iter()
                .chain(candidates.iter())
                .map(|q| dual.of(&(&c * q)))
                .fold(lambda, f64::max);
        }
        let sub_value = problem.c.dot(&mp.x) + ball.radius() * lambda + sub.s.mean();
        if sub_value < state.ub {
            state.ub = sub_value;
            best_x = mp.x.clone();
        }
        let new_vertices = candidates.into_iter().filter(|p| state.vertices.insert(p.clone())).count();
        state.trace.push(CgTraceRow {
            iteration: it,
            lb: state.lb,
            ub: state.ub,
            mp_value: mp.objective,
            sub_value,
            num_vertices: state.vertices.len(),
            new_vertices,
            inner_lambda: lambda,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if state.ub - state.lb <= opts.gap_tol * state.ub.abs().max(1.0) {
            status = CgStatus::Converged;
            break;
        }
    }
    Ok(CgResult {
        x: best_x,
        objective: state.ub,
        status,
        inner_exact,
        state,
    })
}
