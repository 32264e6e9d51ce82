use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use super::VertexSet;
use crate::ambiguity::WassersteinBall;
use crate::conic::{ConicProgram, LinExpr, Model, SolveStatus, SolverOptions, Var, VarMap};
use crate::error::{Error, Result};
use crate::problem::{Instantiated, SampleSet, TwoStageProblem, UncertaintySite};

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintDrSolution {
    pub x: DVector<f64>,
    pub lambda: f64,
    pub s: DVector<f64>,
    pub objective: f64,
    /// `λε + mean(s)`
    pub beta: f64,
    pub iterations: u32,
    pub solve_seconds: f64,
}

/// Master problem over a vertex subset `E_s`:
///
/// ```text
/// min  cᵀx + λε + (1/N) Σ s_i
/// s.t. s_i >= pᵀ(b(ξ̂^i) - A(ξ̂^i) x)     ∀ p ∈ E_s, i
///      λ   >= ||C(x) p||_*                ∀ p ∈ E_s
///      x ∈ X
/// ```
#[derive(Debug, Clone)]
pub struct MasterProblem {
    pub program: ConicProgram,
    pub map: VarMap,
    x: Vec<Var>,
    lambda: Var,
    s: Vec<Var>,
}

pub fn build_mp(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    vertices: &VertexSet,
) -> Result<MasterProblem> {
    if vertices.is_empty() {
        return Err(Error::Input("the master problem needs at least one vertex".into()));
    }
    let instances = instances(problem, samples)?;
    let all: Vec<&DVector<f64>> = vertices.iter().collect();
    let per_sample = vec![all.clone(); samples.len()];
    Ok(assemble(problem, ball, &instances, &per_sample, &all, None))
}

fn instances(problem: &TwoStageProblem, samples: &SampleSet) -> Result<Vec<Instantiated>> {
    if problem.site != UncertaintySite::Constraints {
        return Err(Error::Model(
            "the master problem needs constraint-site uncertainty".into(),
        ));
    }
    samples.check_dim(problem.dim_xi())?;
    samples.iter().map(|xi| problem.uncertainty.instantiate(xi)).collect()
}

// `per_sample[i]` lists the vertices cut into s_i, `norm_cuts` those cut
// into λ.
fn assemble(
    problem: &TwoStageProblem,
    ball: &WassersteinBall,
    instances: &[Instantiated],
    per_sample: &[Vec<&DVector<f64>>],
    norm_cuts: &[&DVector<f64>],
    pin: Option<&DVector<f64>>,
) -> MasterProblem {
    let u = &problem.uncertainty;
    let n = instances.len();
    let mut model = Model::new();
    let x = problem.first_stage.add_to_model(&mut model);
    if let Some(pin) = pin {
        for (v, &val) in x.iter().zip(pin.iter()) {
            model.add_eq(*v, val);
        }
    }
    let lambda = model.add_nonneg_var();
    let s = model.add_vars(n, None, None);
    let dual = ball.norm.dual();
    for (i, inst) in instances.iter().enumerate() {
        for p in &per_sample[i] {
            let coef = inst.a.tr_mul(p);
            let rhs = LinExpr::dot(&x, coef.iter().map(|v| -v)) + inst.b.dot(p);
            model.add_ge(s[i], rhs);
        }
    }
    for p in norm_cuts {
        let cp: Vec<LinExpr> = (0..u.dim_xi())
            .map(|j| LinExpr::dot(&x, u.a_terms[j].tr_mul(p).iter().map(|v| -v)) + u.b_terms[j].dot(p))
            .collect();
        model.add_norm_le(lambda, cp, dual);
    }
    let mut objective = LinExpr::dot(&x, problem.c.iter().copied());
    objective.add_term(lambda, ball.radius());
    for &si in &s {
        objective.add_term(si, 1.0 / n as f64);
    }
    model.set_objective(objective);
    let (program, map) = model.canonicalize();
    MasterProblem {
        program,
        map,
        x,
        lambda,
        s,
    }
}

fn solve_built(
    problem: &TwoStageProblem,
    ball: &WassersteinBall,
    mp: &MasterProblem,
    lambda_points: &[&DVector<f64>],
    opts: &SolverOptions,
    start: Instant,
) -> Result<ConstraintDrSolution> {
    let sol = crate::conic::solve(&mp.program, opts)?;
    match sol.status {
        SolveStatus::Infeasible => return Err(crate::problem::diagnose_infeasible(problem, opts)),
        SolveStatus::Unbounded => {
            return Err(Error::Model("master problem is unbounded below".into()))
        }
        _ => {}
    }
    let sol = sol.require_usable("master problem")?;
    let x = DVector::from_vec(mp.map.values(&sol.primal, &mp.x));
    let s = DVector::from_vec(mp.map.values(&sol.primal, &mp.s));
    let lambda = if ball.is_degenerate() {
        let c = problem.uncertainty.c_matrix(&x);
        lambda_points.iter().map(|p| ball.norm.dual().of(&(&c * *p))).fold(0.0, f64::max)
    } else {
        mp.map.value(&sol.primal, mp.lambda)
    };
    let beta = lambda * ball.radius() + s.mean();
    Ok(ConstraintDrSolution {
        objective: problem.c.dot(&x) + beta,
        x,
        lambda,
        s,
        beta,
        iterations: sol.iterations,
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Master problem over a growing vertex set whose rows are added on
/// demand: each sample keeps the vertices that were ever most violated for
/// it, and the norm bound keeps the vertices that were ever largest. The
/// restricted optimum never exceeds the full one, and rounds continue until
/// no row of the full problem is violated.
#[derive(Debug, Clone)]
pub(crate) struct LazyMaster {
    instances: Vec<Instantiated>,
    per_sample: Vec<Vec<usize>>,
    norm_cuts: Vec<usize>,
    pub rounds: usize,
}

impl LazyMaster {
    pub fn new(problem: &TwoStageProblem, samples: &SampleSet) -> Result<Self> {
        let instances = instances(problem, samples)?;
        Ok(Self {
            per_sample: vec![Vec::new(); instances.len()],
            instances,
            norm_cuts: Vec::new(),
            rounds: 0,
        })
    }

    // Adds the most violated row per sample and for λ at `x`; returns how
    // many were added.
    fn separate(
        &mut self,
        problem: &TwoStageProblem,
        ball: &WassersteinBall,
        vertices: &[DVector<f64>],
        x: &DVector<f64>,
        current: Option<(&DVector<f64>, f64)>,
    ) -> usize {
        let mut added = 0;
        let argmax = |f: &dyn Fn(&DVector<f64>) -> f64| {
            vertices
                .iter()
                .enumerate()
                .map(|(v, p)| (v, f(p)))
                .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
        };
        for (i, inst) in self.instances.iter().enumerate() {
            let r = &inst.b - &inst.a * x;
            let (v, val) = argmax(&|p| p.dot(&r));
            let violated = match current {
                Some((s, _)) => val > s[i] + CUT_TOL * val.abs().max(1.0),
                None => true,
            };
            if violated && !self.per_sample[i].contains(&v) {
                self.per_sample[i].push(v);
                added += 1;
            }
        }
        if !ball.is_degenerate() {
            let c = problem.uncertainty.c_matrix(x);
            let dual = ball.norm.dual();
            let (v, val) = argmax(&|p| dual.of(&(&c * p)));
            let violated = match current {
                Some((_, lambda)) => val > lambda + CUT_TOL * val.abs().max(1.0),
                None => true,
            };
            if violated && !self.norm_cuts.contains(&v) {
                self.norm_cuts.push(v);
                added += 1;
            }
        }
        added
    }

    /// Solves the master problem over `vertices` (a superset of the set
    /// from any earlier call, in the same order). `hint` seeds the rows.
    pub fn solve(
        &mut self,
        problem: &TwoStageProblem,
        ball: &WassersteinBall,
        vertices: &VertexSet,
        hint: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<ConstraintDrSolution> {
        let start = Instant::now();
        let all = vertices.as_slice();
        if all.is_empty() {
            return Err(Error::Input("the master problem needs at least one vertex".into()));
        }
        self.separate(problem, ball, all, hint, None);
        loop {
            self.rounds += 1;
            let per_sample: Vec<Vec<&DVector<f64>>> =
                self.per_sample.iter().map(|ix| ix.iter().map(|&v| &all[v]).collect()).collect();
            let norm_cuts: Vec<&DVector<f64>> = self.norm_cuts.iter().map(|&v| &all[v]).collect();
            let mp = assemble(problem, ball, &self.instances, &per_sample, &norm_cuts, None);
            let every: Vec<&DVector<f64>> = all.iter().collect();
            let sol = solve_built(problem, ball, &mp, &every, opts, start)?;
            if self.separate(problem, ball, all, &sol.x, Some((&sol.s, sol.lambda))) == 0 {
                return Ok(sol);
            }
        }
    }
}

/// Relative violation that triggers a new master row.
const CUT_TOL: f64 = 1e-9;

pub fn solve_mp(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    vertices: &VertexSet,
    opts: &SolverOptions,
) -> Result<ConstraintDrSolution> {
    let start = Instant::now();
    let mp = build_mp(problem, samples, ball, vertices)?;
    let all: Vec<&DVector<f64>> = vertices.iter().collect();
    solve_built(problem, ball, &mp, &all, opts, start)
}

/// The vertex formulation at a fixed first-stage decision:
/// `cᵀx + ε max_p ||C(x) p||_* + (1/N) Σ_i max_p pᵀ(b(ξ̂^i) - A(ξ̂^i) x)`
/// with the maxima over `vertices`, solved as a conic program.
pub fn worst_case_cost_constraint(
    problem: &TwoStageProblem,
    x: &DVector<f64>,
    samples: &SampleSet,
    ball: &WassersteinBall,
    vertices: &VertexSet,
    opts: &SolverOptions,
) -> Result<ConstraintDrSolution> {
    if x.len() != problem.num_first_stage() || !problem.first_stage.contains(x, 1e-7) {
        return Err(Error::Input("x is not in the first-stage feasible set".into()));
    }
    if vertices.is_empty() {
        return Err(Error::Input("the master problem needs at least one vertex".into()));
    }
    let start = Instant::now();
    let instances = instances(problem, samples)?;
    let all: Vec<&DVector<f64>> = vertices.iter().collect();
    let per_sample = vec![all.clone(); samples.len()];
    let mp = assemble(problem, ball, &instances, &per_sample, &all, Some(x));
    let mut sol = solve_built(problem, ball, &mp, &all, opts, start)?;
    sol.x = x.clone();
    Ok(sol)
}

/// One solve over the complete vertex set of the dual polyhedron.
pub fn solve_corollary_direct(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    all_vertices: &VertexSet,
    opts: &SolverOptions,
) -> Result<ConstraintDrSolution> {
    solve_mp(problem, samples, ball, all_vertices, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint_dr::{enumerate_vertices, norm_max_exact, DualPolyhedron, EnumerationLimits};
    use crate::norm::Norm;
    use crate::problem::{saa_solve, solve_recourse, AffineUncertainty, Polytope};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    // Two products, uncertain yields on the diagonal and uncertain demand.
    fn small_order() -> TwoStageProblem {
        let e = |r: usize, c: usize| {
            let mut m = DMatrix::zeros(2, 2);
            m[(r, c)] = 1.0;
            m
        };
        let v = |i: usize| {
            let mut d = DVector::zeros(2);
            d[i] = 1.0;
            d
        };
        let u = AffineUncertainty::constraints_only(
            DVector::from_vec(vec![7.0, 12.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 6.0, 3.4]),
            vec![e(0, 0), e(1, 1), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
            DVector::from_vec(vec![180.0, 162.0]),
            vec![DVector::zeros(2), DVector::zeros(2), v(0), v(1)],
        )
        .unwrap();
        TwoStageProblem::new(
            DVector::from_vec(vec![2.0, 3.0]),
            Polytope::nonnegative(2).with_inequality(&[1.0, 1.0], 100.0),
            DMatrix::identity(2, 2),
            None,
            u,
            UncertaintySite::Constraints,
        )
        .unwrap()
    }

    fn samples() -> SampleSet {
        SampleSet::from_rows(vec![
            vec![1.0, -2.0, 0.3, -0.2],
            vec![-3.0, 4.0, -0.5, 0.4],
            vec![0.5, 0.5, 0.1, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn zero_vertex_only_reduces_to_first_stage_cost() {
        let p = small_order();
        let e: VertexSet = [DVector::zeros(2)].into_iter().collect();
        let ball = WassersteinBall::new(0.5, Norm::L2).unwrap();
        let sol = solve_mp(&p, &samples(), &ball, &e, &SolverOptions::default()).unwrap();
        // nothing penalizes shortage, so nothing is ordered
        assert!(sol.objective.abs() < 1e-6);
        assert!(sol.x.amax() < 1e-5);
    }

    #[test]
    fn adding_vertices_never_lowers_the_optimum() {
        let p = small_order();
        let poly = DualPolyhedron::from_problem(&p).unwrap();
        let all = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        let ball = WassersteinBall::new(0.3, Norm::L2).unwrap();
        let opts = SolverOptions::default();
        let mut subset = VertexSet::new();
        let mut last = f64::NEG_INFINITY;
        for v in all.iter() {
            subset.insert(v.clone());
            let val = solve_mp(&p, &samples(), &ball, &subset, &opts).unwrap().objective;
            assert!(val >= last - 1e-6 * last.abs().max(1.0));
            last = val;
        }
    }

    #[test]
    fn direct_solution_collapses_to_closed_form() {
        let p = small_order();
        let poly = DualPolyhedron::from_problem(&p).unwrap();
        let all = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        let opts = SolverOptions::default();
        for eps in [0.01, 0.4, 1.0] {
            let ball = WassersteinBall::new(eps, Norm::L2).unwrap();
            let sol = solve_corollary_direct(&p, &samples(), &ball, &all, &opts).unwrap();
            let mean_q: f64 = samples().iter().map(|xi| solve_recourse(&p, &sol.x, xi).unwrap().value).sum::<f64>() / 3.0;
            let lam = norm_max_exact(&p.uncertainty.c_matrix(&sol.x), &all, Norm::L2).unwrap().lambda;
            assert_relative_eq!(sol.objective, p.c.dot(&sol.x) + mean_q + eps * lam, max_relative = 1e-6);
        }
    }

    #[test]
    fn pinned_value_is_the_closed_form() {
        let p = small_order();
        let poly = DualPolyhedron::from_problem(&p).unwrap();
        let all = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        let x = DVector::from_vec(vec![42.7, 57.2]);
        let ball = WassersteinBall::new(0.2, Norm::L2).unwrap();
        let sol = worst_case_cost_constraint(&p, &x, &samples(), &ball, &all, &SolverOptions::default()).unwrap();
        let mean_q: f64 = samples().iter().map(|xi| solve_recourse(&p, &x, xi).unwrap().value).sum::<f64>() / 3.0;
        let lam = norm_max_exact(&p.uncertainty.c_matrix(&x), &all, Norm::L2).unwrap().lambda;
        assert_relative_eq!(sol.beta, mean_q + 0.2 * lam, max_relative = 1e-7);
        assert_relative_eq!(sol.lambda, lam, max_relative = 1e-7);
    }

    #[test]
    fn vanishing_radius_matches_saa() {
        let p = small_order();
        let poly = DualPolyhedron::from_problem(&p).unwrap();
        let all = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        let opts = SolverOptions::default();
        let saa = saa_solve(&p, &samples(), &opts).unwrap();
        let ball = WassersteinBall::new(1e-10, Norm::L2).unwrap();
        let sol = solve_corollary_direct(&p, &samples(), &ball, &all, &opts).unwrap();
        assert_relative_eq!(sol.objective, saa.value, max_relative = 1e-6);
    }
}
