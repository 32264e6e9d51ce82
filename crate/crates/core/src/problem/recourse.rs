use nalgebra::DVector;
use serde::Serialize;

use super::TwoStageProblem;
use crate::error::{dim_err, Error, Result};
use crate::lp::{DenseLp, LpStatus, RowSense};

/// Optimal recourse at one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RecourseSolution {
    pub value: f64,
    pub y: DVector<f64>,
    /// Multipliers of `A(ξ)x + By >= b(ξ)`, a vertex of `{p >= 0 : Bᵀp <= z(ξ)}`
    /// when there are no recourse equalities.
    pub dual: DVector<f64>,
    /// Multipliers of `Tx + Wy = h`.
    pub eq_dual: DVector<f64>,
}

fn recourse_lp(problem: &TwoStageProblem, x: &DVector<f64>, xi: &DVector<f64>, with_cost: bool) -> Result<DenseLp> {
    if x.len() != problem.num_first_stage() {
        return dim_err(format!(
            "x has {} entries, expected {}",
            x.len(),
            problem.num_first_stage()
        ));
    }
    let inst = problem.uncertainty.instantiate(xi)?;
    let rhs = &inst.b - &inst.a * x;
    let mut lp = DenseLp::new(problem.num_recourse());
    if with_cost {
        lp.cost = inst.z.iter().copied().collect();
    }
    for r in 0..problem.num_rows() {
        lp.add_row(problem.recourse.row(r).iter().copied().collect(), RowSense::Ge, rhs[r]);
    }
    if let Some(eq) = &problem.recourse_eq {
        let h = &eq.h - &eq.t * x;
        for r in 0..h.len() {
            lp.add_row(eq.w.row(r).iter().copied().collect(), RowSense::Eq, h[r]);
        }
    }
    Ok(lp)
}

/// Solves the recourse LP `Q(x, ξ)` and returns a basic optimal solution
/// together with its dual multipliers.
pub fn solve_recourse(problem: &TwoStageProblem, x: &DVector<f64>, xi: &DVector<f64>) -> Result<RecourseSolution> {
    let lp = recourse_lp(problem, x, xi, true)?;
    let sol = lp.solve();
    match sol.status {
        LpStatus::Optimal => {
            let k = problem.num_rows();
            Ok(RecourseSolution {
                value: sol.objective,
                y: DVector::from_vec(sol.x),
                dual: DVector::from_iterator(k, sol.duals[..k].iter().copied()),
                eq_dual: DVector::from_iterator(sol.duals.len() - k, sol.duals[k..].iter().copied()),
            })
        }
        LpStatus::Infeasible => Err(Error::RecourseInfeasible(format!(
            "no feasible recourse at ξ = {:?}",
            xi.as_slice()
        ))),
        LpStatus::Unbounded => Err(Error::RecourseUnbounded(format!(
            "recourse unbounded below at ξ = {:?}",
            xi.as_slice()
        ))),
    }
}

/// Per-probe feasibility of the recourse constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: Vec<bool>,
}

impl FeasibilityReport {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }

    pub fn infeasible_indices(&self) -> Vec<usize> {
        self.feasible
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (!f).then_some(i))
            .collect()
    }
}

/// Phase-one check of `{y >= 0 : A(ξ)x + By >= b(ξ), Wy = h - Tx}` at each
/// probe point. This is a sampled check: it cannot certify relatively
/// complete recourse over a continuous support.
pub fn check_recourse_feasibility(
    problem: &TwoStageProblem,
    x: &DVector<f64>,
    probes: &[DVector<f64>],
) -> Result<FeasibilityReport> {
    let feasible = probes
        .iter()
        .map(|xi| Ok(recourse_lp(problem, x, xi, false)?.solve().status != LpStatus::Infeasible))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeasibilityReport { feasible })
}
