//! Cone-constrained linear programs.
//!
//! A [`ConicProgram`] is
//!
//! ```text
//! minimize    c·v + offset
//! subject to  Aeq v = beq
//!             h - G v ∈ K1 × K2 × ...
//! ```
//!
//! where every `Ki` is a nonnegative orthant or a second-order cone
//! `{(t, u) : t >= ||u||_2}`. Programs are usually produced by
//! [`Model::canonicalize`] and solved with [`solve`], which runs the
//! Clarabel primal-dual interior-point method.

mod dump;
mod model;

pub use dump::write_text;
pub use model::{LinExpr, Model, Var, VarMap};

use std::env;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate-format sparse matrix. Duplicate entries are summed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// `y = M v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(i, j, a) in &self.entries {
            y[i] += a * v[j];
        }
        y
    }

    /// `y = Mᵀ v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(i, j, a) in &self.entries {
            y[j] += a * v[i];
        }
        y
    }

    fn to_csc(&self, row_offset: usize, other: Option<&SparseMatrix>) -> CscMatrix<f64> {
        // stacks `self` on top of `other`, shifting `other` rows by `row_offset`
        let nrows = row_offset + other.map_or(0, |o| o.nrows);
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for &(i, j, a) in &self.entries {
            cols[j].push((i, a));
        }
        if let Some(o) = other {
            for &(i, j, a) in &o.entries {
                cols[j].push((i + row_offset, a));
            }
        }
        let mut colptr = Vec::with_capacity(self.ncols + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut cols {
            col.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(i, a) in col.iter() {
                if last == Some(i) {
                    *nzval.last_mut().unwrap() += a;
                } else {
                    rowval.push(i);
                    nzval.push(a);
                    last = Some(i);
                }
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(nrows, self.ncols, colptr, rowval, nzval)
    }
}

/// One block of the cone constraint `h - G v ∈ K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    NonNegative(usize),
    /// `(t, u)` with `t >= ||u||_2`; the first coordinate is the bound.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub cone_matrix: SparseMatrix,
    pub cone_rhs: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let bad = |msg: String| Err(Error::Dimension(msg));
        if self.objective.len() != n {
            return bad(format!("objective has {} entries, expected {n}", self.objective.len()));
        }
        if self.eq_matrix.ncols != n || self.cone_matrix.ncols != n {
            return bad("constraint matrices must have num_vars columns".into());
        }
        if self.eq_matrix.nrows != self.eq_rhs.len() {
            return bad("equality block rows do not match its right-hand side".into());
        }
        if self.cone_matrix.nrows != self.cone_rhs.len() {
            return bad("cone block rows do not match its right-hand side".into());
        }
        let total: usize = self.cones.iter().map(Cone::dim).sum();
        if total != self.cone_matrix.nrows {
            return bad(format!(
                "cone dimensions sum to {total} but the cone block has {} rows",
                self.cone_matrix.nrows
            ));
        }
        if self.cones.iter().any(|c| c.dim() == 0) {
            return bad("zero-dimensional cone".into());
        }
        Ok(())
    }

    pub fn num_second_order(&self) -> usize {
        self.cones
            .iter()
            .filter(|c| matches!(c, Cone::SecondOrder(_)))
            .count()
    }

    pub fn objective_value(&self, v: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(v).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Largest violation of the equality and cone constraints at `v`.
    pub fn primal_violation(&self, v: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        let ax = self.eq_matrix.mul_vec(v);
        for (a, b) in ax.iter().zip(&self.eq_rhs) {
            worst = worst.max((a - b).abs());
        }
        let gv = self.cone_matrix.mul_vec(v);
        let slack: Vec<f64> = self.cone_rhs.iter().zip(&gv).map(|(h, g)| h - g).collect();
        worst.max(cone_violation(&self.cones, &slack))
    }
}

/// Distance-like violation of `s ∈ K` (0 when inside).
pub fn cone_violation(cones: &[Cone], s: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    let mut at = 0;
    for cone in cones {
        let d = cone.dim();
        let block = &s[at..at + d];
        match cone {
            Cone::NonNegative(_) => {
                for &x in block {
                    worst = worst.max(-x);
                }
            }
            Cone::SecondOrder(_) => {
                let tail: f64 = block[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                worst = worst.max(tail - block[0]);
            }
        }
        at += d;
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Converged only to the reduced tolerances; the point is returned but
    /// callers decide whether to trust it.
    Inaccurate,
    Infeasible,
    Unbounded,
    /// Iteration limit, stalled progress or a numerically singular KKT system.
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// Multipliers of the equality block.
    pub dual_eq: Vec<f64>,
    /// Multipliers of the cone block (in the dual cone, which is self-dual here).
    pub dual_cone: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
    pub residuals: Residuals,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }

    /// For an `Infeasible` result, evaluates the Farkas certificate
    /// `(y_eq, y_cone)`: returns `(||Aeqᵀ y_eq + Gᵀ y_cone||_inf, beqᵀ y_eq + hᵀ y_cone)`.
    /// A valid certificate has a tiny first entry and a negative second one.
    pub fn farkas(&self, program: &ConicProgram) -> Option<(f64, f64)> {
        if self.status != SolveStatus::Infeasible {
            return None;
        }
        let a = program.eq_matrix.tr_mul_vec(&self.dual_eq);
        let g = program.cone_matrix.tr_mul_vec(&self.dual_cone);
        let resid = a
            .iter()
            .zip(&g)
            .fold(0.0f64, |m, (x, y)| m.max((x + y).abs()));
        let value = dot(&program.eq_rhs, &self.dual_eq) + dot(&program.cone_rhs, &self.dual_cone);
        Some((resid, value))
    }

    pub fn require_usable(self, what: &str) -> Result<Self> {
        if self.is_usable() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                detail: format!("{what} (residuals {:?})", self.residuals),
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

impl SolverOptions {
    /// Defaults, overridden by `WDR_TOL` (feasibility and gap) and
    /// `WDR_MAX_ITER` when set.
    pub fn from_env() -> Self {
        let mut o = Self::default();
        if let Some(t) = env::var("WDR_TOL").ok().and_then(|v| v.parse().ok()) {
            o.tol_feas = t;
            o.tol_gap = t;
        }
        if let Some(m) = env::var("WDR_MAX_ITER").ok().and_then(|v| v.parse().ok()) {
            o.max_iter = m;
        }
        o
    }
}

/// Solves `program` with the interior-point method.
///
/// Malformed programs are rejected with a dimension error; every other
/// outcome is reported through [`ConicSolution::status`].
pub fn solve(program: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution> {
    program.validate()?;
    let n = program.num_vars;
    let m_eq = program.eq_matrix.nrows;
    let m = m_eq + program.cone_matrix.nrows;

    let p = CscMatrix::zeros((n, n));
    let a = program.eq_matrix.to_csc(m_eq, Some(&program.cone_matrix));
    let mut b = program.eq_rhs.clone();
    b.extend_from_slice(&program.cone_rhs);

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    for cone in &program.cones {
        match (*cone, cones.last_mut()) {
            (Cone::NonNegative(d), Some(SupportedConeT::NonnegativeConeT(prev))) => *prev += d,
            (Cone::NonNegative(d), _) => cones.push(SupportedConeT::NonnegativeConeT(d)),
            (Cone::SecondOrder(1), _) => cones.push(SupportedConeT::NonnegativeConeT(1)),
            (Cone::SecondOrder(d), _) => cones.push(SupportedConeT::SecondOrderConeT(d)),
        }
    }

    let mut settings = DefaultSettings::<f64> {
        verbose: opts.verbose,
        max_iter: opts.max_iter,
        tol_feas: opts.tol_feas,
        tol_gap_abs: opts.tol_gap,
        tol_gap_rel: opts.tol_gap,
        ..DefaultSettings::default()
    };
    settings.presolve_enable = true;

    if m == 0 {
        // no constraints: bounded only if the objective vanishes
        let zero = program.objective.iter().all(|&c| c == 0.0);
        return Ok(ConicSolution {
            status: if zero { SolveStatus::Optimal } else { SolveStatus::Unbounded },
            primal: vec![0.0; n],
            dual_eq: vec![],
            dual_cone: vec![],
            objective: program.objective_offset,
            dual_objective: program.objective_offset,
            iterations: 0,
            residuals: Residuals::default(),
        });
    }

    let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, settings)
        .map_err(|e| Error::Input(format!("conic solver rejected the program: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::MaxIter,
    };

    let primal = sol.x.clone();
    let dual_eq = sol.z[..m_eq].to_vec();
    let dual_cone = sol.z[m_eq..].to_vec();

    // residuals recomputed from the program data
    let primal_res = program.primal_violation(&primal);
    let at_y = program.eq_matrix.tr_mul_vec(&dual_eq);
    let gt_z = program.cone_matrix.tr_mul_vec(&dual_cone);
    let dual_res = (0..n)
        .map(|j| (program.objective[j] + at_y[j] + gt_z[j]).abs())
        .fold(0.0f64, f64::max);
    let objective = program.objective_value(&primal);
    let dual_objective =
        program.objective_offset - dot(&program.eq_rhs, &dual_eq) - dot(&program.cone_rhs, &dual_cone);

    Ok(ConicSolution {
        status,
        primal,
        dual_eq,
        dual_cone,
        objective,
        dual_objective,
        iterations: sol.iterations,
        residuals: Residuals {
            primal: primal_res,
            dual: dual_res,
            gap: (objective - dual_objective).abs(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn min_x_subject_to_x_at_least_one() {
        let mut m = Model::new();
        let x = m.add_free_var();
        m.add_ge(x, 1.0);
        m.set_objective(x);
        let (prog, map) = m.canonicalize();
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(map.value(&sol.primal, x), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn symmetric_second_order_cone() {
        let mut m = Model::new();
        let x = m.add_free_var();
        let y = m.add_free_var();
        m.add_soc(LinExpr::constant(1.0), vec![x.into(), y.into()]);
        m.set_objective(LinExpr::from(x) * -1.0 - LinExpr::from(y));
        let (prog, map) = m.canonicalize();
        assert_eq!(prog.cones, vec![Cone::SecondOrder(3)]);
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.objective, -2f64.sqrt(), epsilon = 1e-7);
        assert_abs_diff_eq!(map.value(&sol.primal, x), 0.5f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(map.value(&sol.primal, y), 0.5f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn reports_infeasible_with_certificate() {
        let mut m = Model::new();
        let x = m.add_var(Some(0.0), None);
        m.add_le(x, -1.0);
        m.set_objective(x);
        let (prog, _) = m.canonicalize();
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let (resid, value) = sol.farkas(&prog).unwrap();
        assert!(resid < 1e-8, "{resid}");
        assert!(value < 0.0);
    }

    #[test]
    fn reports_unbounded() {
        let mut m = Model::new();
        let x = m.add_var(Some(0.0), None);
        m.set_objective(LinExpr::from(x) * -1.0);
        let (prog, _) = m.canonicalize();
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn malformed_program_is_rejected() {
        let prog = ConicProgram {
            num_vars: 1,
            objective: vec![1.0],
            cone_matrix: SparseMatrix::new(2, 1),
            cone_rhs: vec![0.0, 0.0],
            cones: vec![Cone::NonNegative(1)],
            eq_matrix: SparseMatrix::new(0, 1),
            ..Default::default()
        };
        assert!(matches!(
            solve(&prog, &SolverOptions::default()),
            Err(Error::Dimension(_))
        ));
    }
}
