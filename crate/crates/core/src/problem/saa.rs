use nalgebra::DVector;

use super::{SampleSet, TwoStageProblem};
use crate::conic::{LinExpr, Model, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaaSolution {
    pub x: DVector<f64>,
    /// `cᵀx + (1/N) Σ Q(x, ξ̂^i)`
    pub value: f64,
    pub ys: Vec<DVector<f64>>,
    pub iterations: u32,
}

/// Sample average approximation with one recourse copy per sample.
pub fn saa_solve(problem: &TwoStageProblem, samples: &SampleSet, opts: &SolverOptions) -> Result<SaaSolution> {
    samples.check_dim(problem.dim_xi())?;
    let n = samples.len() as f64;
    let mut model = Model::new();
    let x = problem.first_stage.add_to_model(&mut model);
    let mut objective = LinExpr::dot(&x, problem.c.iter().copied());
    let mut ys = Vec::with_capacity(samples.len());
    for xi in samples.iter() {
        let inst = problem.uncertainty.instantiate(xi)?;
        let y = problem.add_recourse_block(&mut model, &x, &inst.a, &inst.b);
        objective += LinExpr::dot(&y, inst.z.iter().map(|z| z / n));
        ys.push(y);
    }
    model.set_objective(objective);
    let (sol, map) = model.solve(opts)?;
    match sol.status {
        SolveStatus::Infeasible => return Err(diagnose_infeasible(problem, opts)),
        SolveStatus::Unbounded => {
            return Err(Error::RecourseUnbounded(
                "sample average problem is unbounded below".into(),
            ))
        }
        _ => {}
    }
    let sol = sol.require_usable("sample average problem")?;
    Ok(SaaSolution {
        x: DVector::from_vec(map.values(&sol.primal, &x)),
        value: sol.objective,
        ys: ys
            .iter()
            .map(|y| DVector::from_vec(map.values(&sol.primal, y)))
            .collect(),
        iterations: sol.iterations,
    })
}

/// Distinguishes an empty first-stage set from missing recourse.
pub(crate) fn diagnose_infeasible(problem: &TwoStageProblem, opts: &SolverOptions) -> Error {
    let mut model = Model::new();
    problem.first_stage.add_to_model(&mut model);
    match model.solve(opts) {
        Ok(sol) if sol.0.status == SolveStatus::Infeasible => {
            Error::Model("first-stage feasible set is empty".into())
        }
        _ => Error::RecourseInfeasible(
            "no first-stage decision admits feasible recourse for every sample".into(),
        ),
    }
}
