//! Robust problems whose uncertainty sits in the recourse cost.
//!
//! With `z(ξ) = z0 + Zᵀξ` the worst-case expected recourse over a
//! 1-Wasserstein ball of radius ε is the value of
//!
//! ```text
//! min  λ ε + (1/N) Σ s_i
//! s.t. s_i >= z(ξ̂^i)ᵀ y_i,  λ >= ||Z y_i||_*,  y_i feasible recourse at x
//! ```
//!
//! where `||·||_*` is the dual of the ground norm. [`RecourseCoupling::Shared`]
//! forces `y_1 = … = y_N`, which gives an upper bound.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ambiguity::WassersteinBall;
use crate::conic::{ConicProgram, LinExpr, Model, SolveStatus, SolverOptions, Var, VarMap};
use crate::error::{Error, Result};
use crate::problem::{SampleSet, TwoStageProblem, UncertaintySite};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecourseCoupling {
    /// One recourse vector per sample; exact.
    #[default]
    PerSample,
    /// One recourse vector for all samples.
    Shared,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveDrSolution {
    pub x: DVector<f64>,
    /// Recourse vectors, one per sample (all equal under shared coupling).
    pub ys: Vec<DVector<f64>>,
    pub lambda: f64,
    pub s: DVector<f64>,
    pub objective: f64,
    /// Worst-case expected recourse cost `λε + mean(s)`.
    pub beta: f64,
    pub iterations: u32,
    pub solve_seconds: f64,
}

impl ObjectiveDrSolution {
    pub fn first_stage_cost(&self, problem: &TwoStageProblem) -> f64 {
        problem.c.dot(&self.x)
    }
}

/// The assembled conic program and the handles needed to read a solution.
#[derive(Debug, Clone)]
pub struct ObjectiveDrProgram {
    pub program: ConicProgram,
    pub map: VarMap,
    x: Vec<Var>,
    ys: Vec<Vec<Var>>,
    lambda: Var,
    s: Vec<Var>,
}

fn require_objective_site(problem: &TwoStageProblem) -> Result<()> {
    if problem.site != UncertaintySite::Objective {
        return Err(Error::Model(
            "objective-uncertainty reformulation needs a problem with objective-site uncertainty".into(),
        ));
    }
    Ok(())
}

/// Model with its `x`, per-sample `y`, `λ` and `s` variables.
type BuiltModel = (Model, Vec<Var>, Vec<Vec<Var>>, Var, Vec<Var>);

fn build_model(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    coupling: RecourseCoupling,
    fixed_x: Option<&DVector<f64>>,
) -> Result<BuiltModel> {
    require_objective_site(problem)?;
    samples.check_dim(problem.dim_xi())?;
    let n = samples.len();
    let mut model = Model::new();
    let x = problem.first_stage.add_to_model(&mut model);
    if let Some(x0) = fixed_x {
        for (v, &val) in x.iter().zip(x0.iter()) {
            model.add_eq(*v, val);
        }
    }
    let lambda = model.add_nonneg_var();
    let s = model.add_vars(n, None, None);
    let a = &problem.uncertainty.a0;
    let b = &problem.uncertainty.b0;
    let copies = match coupling {
        RecourseCoupling::PerSample => n,
        RecourseCoupling::Shared => 1,
    };
    let blocks: Vec<Vec<Var>> = (0..copies)
        .map(|_| problem.add_recourse_block(&mut model, &x, a, b))
        .collect();
    let z_mat = &problem.uncertainty.z_matrix;
    let dual = ball.norm.dual();
    for y in &blocks {
        let zy: Vec<LinExpr> = (0..z_mat.nrows())
            .map(|r| LinExpr::dot(y, z_mat.row(r).iter().copied()))
            .collect();
        model.add_norm_le(lambda, zy, dual);
    }
    let ys: Vec<Vec<Var>> = (0..n).map(|i| blocks[i.min(copies - 1)].clone()).collect();
    for (i, xi) in samples.iter().enumerate() {
        let z = problem.uncertainty.cost(xi);
        model.add_ge(s[i], LinExpr::dot(&ys[i], z.iter().copied()));
    }
    let mut objective = LinExpr::dot(&x, problem.c.iter().copied());
    objective.add_term(lambda, ball.radius());
    for &si in &s {
        objective.add_term(si, 1.0 / n as f64);
    }
    model.set_objective(objective);
    Ok((model, x, ys, lambda, s))
}

pub fn build_objective_dr(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    coupling: RecourseCoupling,
) -> Result<ObjectiveDrProgram> {
    let (model, x, ys, lambda, s) = build_model(problem, samples, ball, coupling, None)?;
    let (program, map) = model.canonicalize();
    Ok(ObjectiveDrProgram {
        program,
        map,
        x,
        ys,
        lambda,
        s,
    })
}

fn solve_built(
    problem: &TwoStageProblem,
    built: &ObjectiveDrProgram,
    ball: &WassersteinBall,
    opts: &SolverOptions,
) -> Result<ObjectiveDrSolution> {
    let start = Instant::now();
    let sol = crate::conic::solve(&built.program, opts)?;
    match sol.status {
        SolveStatus::Infeasible => return Err(crate::problem::diagnose_infeasible(problem, opts)),
        SolveStatus::Unbounded => {
            return Err(Error::RecourseUnbounded(
                "robust problem is unbounded below".into(),
            ))
        }
        _ => {}
    }
    let sol = sol.require_usable("objective-uncertainty robust problem")?;
    let read = |v: &[Var]| DVector::from_vec(built.map.values(&sol.primal, v));
    let x = read(&built.x);
    let ys: Vec<DVector<f64>> = built.ys.iter().map(|y| read(y)).collect();
    let s = read(&built.s);
    let dual = ball.norm.dual();
    let z_mat = &problem.uncertainty.z_matrix;
    let lambda = if ball.is_degenerate() {
        // λ carries no cost; report the smallest value consistent with the ys
        ys.iter().map(|y| dual.of(&(z_mat * y))).fold(0.0, f64::max)
    } else {
        built.map.value(&sol.primal, built.lambda)
    };
    let beta = lambda * ball.radius() + s.mean();
    Ok(ObjectiveDrSolution {
        objective: problem.c.dot(&x) + beta,
        x,
        ys,
        lambda,
        s,
        beta,
        iterations: sol.iterations,
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn solve_objective_dr(
    problem: &TwoStageProblem,
    samples: &SampleSet,
    ball: &WassersteinBall,
    coupling: RecourseCoupling,
    opts: &SolverOptions,
) -> Result<ObjectiveDrSolution> {
    let built = build_objective_dr(problem, samples, ball, coupling)?;
    solve_built(problem, &built, ball, opts)
}

/// `β(x)` at a fixed first-stage decision.
#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveBeta {
    pub beta: f64,
    pub ys: Vec<DVector<f64>>,
    pub lambda: f64,
    pub s: DVector<f64>,
    /// `|β - collapsed|`, where `collapsed` minimizes
    /// `(1/N) Σ z(ξ̂^i)ᵀ y_i + ε max_i ||Z y_i||_*` directly.
    pub identity_residual: f64,
}

pub fn worst_case_cost_objective(
    problem: &TwoStageProblem,
    x: &DVector<f64>,
    samples: &SampleSet,
    ball: &WassersteinBall,
    coupling: RecourseCoupling,
    opts: &SolverOptions,
) -> Result<ObjectiveBeta> {
    if x.len() != problem.num_first_stage() || !problem.first_stage.contains(x, 1e-7) {
        return Err(Error::Input("x is not in the first-stage feasible set".into()));
    }
    let (model, _, ys, lambda, s) = build_model(problem, samples, ball, coupling, Some(x))?;
    let (sol, map) = model.solve(opts)?;
    match sol.status {
        SolveStatus::Infeasible => {
            return Err(Error::RecourseInfeasible(
                "no feasible recourse at the given first-stage decision".into(),
            ))
        }
        SolveStatus::Unbounded => {
            return Err(Error::RecourseUnbounded("recourse is unbounded below".into()))
        }
        _ => {}
    }
    let sol = sol.require_usable("worst-case objective cost")?;
    let c_x = problem.c.dot(x);
    let beta = sol.objective - c_x;
    let collapsed = collapsed_value(problem, x, samples, ball, coupling, opts)?;
    let ys: Vec<DVector<f64>> = ys.iter().map(|y| DVector::from_vec(map.values(&sol.primal, y))).collect();
    let lambda = if ball.is_degenerate() {
        let z_mat = &problem.uncertainty.z_matrix;
        ys.iter().map(|y| ball.norm.dual().of(&(z_mat * y))).fold(0.0, f64::max)
    } else {
        map.value(&sol.primal, lambda)
    };
    Ok(ObjectiveBeta {
        beta,
        ys,
        lambda,
        s: DVector::from_vec(map.values(&sol.primal, &s)),
        identity_residual: (beta - collapsed).abs(),
    })
}

// Minimizes (1/N) Σ z(ξ̂^i)ᵀ y_i + ε t with t >= ||Z y_i||_* and no epigraph
// variables for the per-sample terms.
fn collapsed_value(
    problem: &TwoStageProblem,
    x: &DVector<f64>,
    samples: &SampleSet,
    ball: &WassersteinBall,
    coupling: RecourseCoupling,
    opts: &SolverOptions,
) -> Result<f64> {
    let n = samples.len();
    let mut model = Model::new();
    let xv = problem.first_stage.add_to_model(&mut model);
    for (v, &val) in xv.iter().zip(x.iter()) {
        model.add_eq(*v, val);
    }
    let t = model.add_nonneg_var();
    let a = &problem.uncertainty.a0;
    let b = &problem.uncertainty.b0;
    let z_mat = &problem.uncertainty.z_matrix;
    let copies = match coupling {
        RecourseCoupling::PerSample => n,
        RecourseCoupling::Shared => 1,
    };
    let blocks: Vec<Vec<Var>> = (0..copies)
        .map(|_| problem.add_recourse_block(&mut model, &xv, a, b))
        .collect();
    for y in &blocks {
        let zy = (0..z_mat.nrows())
            .map(|r| LinExpr::dot(y, z_mat.row(r).iter().copied()))
            .collect();
        model.add_norm_le(t, zy, ball.norm.dual());
    }
    let mut objective = LinExpr::term(t, ball.radius());
    for (i, xi) in samples.iter().enumerate() {
        let z = problem.uncertainty.cost(xi);
        objective += LinExpr::dot(&blocks[i.min(copies - 1)], z.iter().map(|v| v / n as f64));
    }
    model.set_objective(objective);
    let (sol, _) = model.solve(opts)?;
    Ok(sol.require_usable("collapsed worst-case objective cost")?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::Cone;
    use crate::norm::Norm;
    use crate::problem::{saa_solve, solve_recourse, AffineUncertainty, Polytope};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    // Two routes with uncertain unit costs; demand 1 must be met.
    // min x (free capacity cost 0) ... recourse: y1 + y2 >= 1, y <= capacity x.
    fn routing(z_mat: DMatrix<f64>) -> TwoStageProblem {
        // rows: y1 + y2 >= 1, x1 - y1 >= 0, x2 - y2 >= 0
        let b_mat = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let a = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u = AffineUncertainty::objective_only(DVector::from_vec(vec![2.0, 2.5]), z_mat, a, b).unwrap();
        TwoStageProblem::new(
            DVector::from_vec(vec![0.2, 0.3]),
            Polytope::nonnegative(2).with_inequality(&[1.0, 1.0], 1.5),
            b_mat,
            None,
            u,
            UncertaintySite::Objective,
        )
        .unwrap()
    }

    fn samples() -> SampleSet {
        SampleSet::from_rows(vec![vec![0.5, -0.2, 0.1], vec![-0.4, 0.3, 0.0], vec![0.1, 0.1, -0.3]]).unwrap()
    }

    fn z3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5])
    }

    #[test]
    fn l2_ground_norm_gives_one_cone_of_dimension_four() {
        let p = routing(z3());
        let ball = WassersteinBall::new(0.1, Norm::L2).unwrap();
        let built = build_objective_dr(&p, &SampleSet::from_rows(vec![vec![0.0; 3]]).unwrap(), &ball, RecourseCoupling::Shared).unwrap();
        let socs: Vec<_> = built.program.cones.iter().filter(|c| matches!(c, Cone::SecondOrder(_))).collect();
        assert_eq!(socs, vec![&Cone::SecondOrder(4)]);
    }

    #[test]
    fn wrong_site_is_rejected() {
        let mut p = routing(z3());
        p.site = UncertaintySite::Constraints;
        let ball = WassersteinBall::new(0.1, Norm::L2).unwrap();
        assert!(matches!(
            solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::PerSample, &SolverOptions::default()),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn zero_z_reduces_to_saa() {
        let p = routing(DMatrix::zeros(3, 2));
        let ball = WassersteinBall::new(0.7, Norm::L2).unwrap();
        let opts = SolverOptions::default();
        let dr = solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::PerSample, &opts).unwrap();
        let saa = saa_solve(&p, &samples(), &opts).unwrap();
        assert_relative_eq!(dr.objective, saa.value, max_relative = 1e-6);
        assert!(dr.lambda < 1e-6);
    }

    #[test]
    fn vanishing_radius_matches_saa() {
        let p = routing(z3());
        let opts = SolverOptions::default();
        let saa = saa_solve(&p, &samples(), &opts).unwrap();
        for eps in [0.0, 1e-10] {
            let ball = WassersteinBall::with_radius(eps, Norm::L2).unwrap();
            let dr = solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::PerSample, &opts).unwrap();
            assert_relative_eq!(dr.objective, saa.value, max_relative = 1e-6);
        }
    }

    #[test]
    fn solution_invariants_hold() {
        let p = routing(z3());
        let opts = SolverOptions::default();
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            for coupling in [RecourseCoupling::PerSample, RecourseCoupling::Shared] {
                let ball = WassersteinBall::new(0.3, norm).unwrap();
                let sol = solve_objective_dr(&p, &samples(), &ball, coupling, &opts).unwrap();
                let q = norm.dual();
                for (i, xi) in samples().iter().enumerate() {
                    let y = &sol.ys[i];
                    assert!(sol.lambda >= q.of(&(&p.uncertainty.z_matrix * y)) - 1e-6);
                    assert!(sol.s[i] >= p.uncertainty.cost(xi).dot(y) - 1e-6);
                }
                assert_relative_eq!(sol.objective, p.c.dot(&sol.x) + sol.lambda * 0.3 + sol.s.mean(), max_relative = 1e-7);
                // the dual-norm constraint is active for some sample
                let active = sol.ys.iter().map(|y| q.of(&(&p.uncertainty.z_matrix * y))).fold(0.0, f64::max);
                if sol.lambda > 1e-6 {
                    assert_relative_eq!(sol.lambda, active, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn shared_coupling_is_an_upper_bound() {
        let p = routing(z3());
        let opts = SolverOptions::default();
        let ball = WassersteinBall::new(0.3, Norm::L2).unwrap();
        let exact = solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::PerSample, &opts).unwrap();
        let shared = solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::Shared, &opts).unwrap();
        assert!(shared.objective >= exact.objective - 1e-7);
    }

    #[test]
    fn fixed_recourse_closed_form() {
        // y pinned to ŷ = (1, 0) by x = (1, 0): beta = mean z(ξ)ᵀŷ + ε ||Z ŷ||_2
        let p = routing(z3());
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let eps = 0.25;
        let ball = WassersteinBall::new(eps, Norm::L2).unwrap();
        let r = worst_case_cost_objective(&p, &x, &samples(), &ball, RecourseCoupling::PerSample, &SolverOptions::default()).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let mean_cost: f64 = samples().iter().map(|xi| p.uncertainty.cost(xi).dot(&y)).sum::<f64>() / 3.0;
        let expected = mean_cost + eps * (&p.uncertainty.z_matrix * &y).norm();
        assert_relative_eq!(r.beta, expected, max_relative = 1e-7);
        assert!(r.identity_residual < 1e-6);
    }

    #[test]
    fn beta_is_monotone_concave_in_radius_and_dominates_saa() {
        let p = routing(z3());
        let opts = SolverOptions::default();
        let x = DVector::from_vec(vec![0.8, 0.7]);
        let saa_avg: f64 = samples().iter().map(|xi| solve_recourse(&p, &x, xi).unwrap().value).sum::<f64>() / 3.0;
        let grid: Vec<f64> = (0..8).map(|k| 0.2 * k as f64).collect();
        let betas: Vec<f64> = grid
            .iter()
            .map(|&e| {
                let ball = WassersteinBall::with_radius(e, Norm::L2).unwrap();
                worst_case_cost_objective(&p, &x, &samples(), &ball, RecourseCoupling::PerSample, &opts).unwrap().beta
            })
            .collect();
        assert_relative_eq!(betas[0], saa_avg, max_relative = 1e-7);
        for w in betas.windows(2) {
            assert!(w[1] >= w[0] - 1e-7);
        }
        for w in betas.windows(3) {
            assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-7);
        }
    }

    #[test]
    fn ground_norm_ordering() {
        // d_1 >= d_2 >= d_inf, so the L1 ball is the smallest and the Linf ball the largest
        let p = routing(z3());
        let opts = SolverOptions::default();
        let value = |norm| {
            let ball = WassersteinBall::new(0.4, norm).unwrap();
            solve_objective_dr(&p, &samples(), &ball, RecourseCoupling::PerSample, &opts).unwrap().objective
        };
        let (l1, l2, linf) = (value(Norm::L1), value(Norm::L2), value(Norm::Linf));
        assert!(l1 <= l2 + 1e-7 && l2 <= linf + 1e-7, "{l1} {l2} {linf}");
    }
}
