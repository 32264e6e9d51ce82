//! Two-stage stochastic linear programs with affinely parametrized data.
//!
//! The recourse problem at first-stage decision `x` and realization `ξ` is
//!
//! ```text
//! Q(x, ξ) = min  z(ξ)ᵀ y
//!           s.t. A(ξ) x + B y >= b(ξ)
//!                T x + W y  = h          (optional, uncertainty-free)
//!                y >= 0
//! ```
//!
//! with `z(ξ) = z0 + Zᵀξ`, `A(ξ) = A0 + Σ ξ_j A_j`, `b(ξ) = b0 + Σ ξ_j b_j`.
//! Dimensions: `n` first-stage variables, `n_y` recourse variables, `k`
//! inequality rows, `m = dim ξ`.

pub mod io;
mod recourse;
mod saa;

pub use recourse::{check_recourse_feasibility, solve_recourse, FeasibilityReport, RecourseSolution};
pub(crate) use saa::diagnose_infeasible;
pub use saa::{saa_solve, SaaSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{LinExpr, Model, Var};
use crate::error::{dim_err, Error, Result};

/// Which part of the recourse problem depends on `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintySite {
    Objective,
    Constraints,
}

/// Affine maps `ξ ↦ (z(ξ), A(ξ), b(ξ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineUncertainty {
    pub z0: DVector<f64>,
    /// `m × n_y`; row `j` is `z_j`, so `z(ξ) = z0 + Zᵀ ξ`.
    pub z_matrix: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub a_terms: Vec<DMatrix<f64>>,
    pub b0: DVector<f64>,
    pub b_terms: Vec<DVector<f64>>,
}

/// Data of the recourse problem at one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiated {
    pub z: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineUncertainty {
    pub fn new(
        z0: DVector<f64>,
        z_matrix: DMatrix<f64>,
        a0: DMatrix<f64>,
        a_terms: Vec<DMatrix<f64>>,
        b0: DVector<f64>,
        b_terms: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let m = z_matrix.nrows();
        if z_matrix.ncols() != z0.len() {
            return dim_err(format!(
                "Z has {} columns but z0 has {} entries",
                z_matrix.ncols(),
                z0.len()
            ));
        }
        if a_terms.len() != m || b_terms.len() != m {
            return dim_err(format!(
                "uncertainty dimension mismatch: Z has {m} rows, {} A terms, {} b terms",
                a_terms.len(),
                b_terms.len()
            ));
        }
        if a0.nrows() != b0.len() {
            return dim_err("A0 rows must match b0 length");
        }
        if a_terms.iter().any(|a| a.shape() != a0.shape()) {
            return dim_err("every A term must have the shape of A0");
        }
        if b_terms.iter().any(|b| b.len() != b0.len()) {
            return dim_err("every b term must have the length of b0");
        }
        Ok(Self {
            z0,
            z_matrix,
            a0,
            a_terms,
            b0,
            b_terms,
        })
    }

    /// Only the recourse cost varies: `z(ξ) = z0 + Zᵀξ`, fixed `A`, `b`.
    pub fn objective_only(z0: DVector<f64>, z_matrix: DMatrix<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let m = z_matrix.nrows();
        let a_terms = vec![DMatrix::zeros(a.nrows(), a.ncols()); m];
        let b_terms = vec![DVector::zeros(b.len()); m];
        Self::new(z0, z_matrix, a, a_terms, b, b_terms)
    }

    /// Only the constraint data varies; the recourse cost is the constant `z`.
    pub fn constraints_only(
        z: DVector<f64>,
        a0: DMatrix<f64>,
        a_terms: Vec<DMatrix<f64>>,
        b0: DVector<f64>,
        b_terms: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let m = a_terms.len();
        let zm = DMatrix::zeros(m, z.len());
        Self::new(z, zm, a0, a_terms, b0, b_terms)
    }

    pub fn dim_xi(&self) -> usize {
        self.z_matrix.nrows()
    }

    pub fn num_rows(&self) -> usize {
        self.b0.len()
    }

    pub fn num_first_stage(&self) -> usize {
        self.a0.ncols()
    }

    fn check_xi(&self, xi: &DVector<f64>) -> Result<()> {
        if xi.len() != self.dim_xi() {
            return dim_err(format!("ξ has {} entries, expected {}", xi.len(), self.dim_xi()));
        }
        Ok(())
    }

    pub fn instantiate(&self, xi: &DVector<f64>) -> Result<Instantiated> {
        self.check_xi(xi)?;
        let z = self.cost(xi);
        let mut a = self.a0.clone();
        let mut b = self.b0.clone();
        for (j, &v) in xi.iter().enumerate() {
            if v != 0.0 {
                a += &self.a_terms[j] * v;
                b += &self.b_terms[j] * v;
            }
        }
        Ok(Instantiated { z, a, b })
    }

    /// `z(ξ)`; `ξ` must have the right length.
    pub fn cost(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.z0 + self.z_matrix.tr_mul(xi)
    }

    /// `b(ξ) - A(ξ) x`
    pub fn rhs_at(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_xi(xi)?;
        Ok(self.offset(x) + self.c_matrix(x).tr_mul(xi))
    }

    /// `b0 - A0 x`
    pub fn offset(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b0 - &self.a0 * x
    }

    /// The `m × k` matrix whose row `j` is `(b_j - A_j x)ᵀ`, so that
    /// `b(ξ) - A(ξ) x = (b0 - A0 x) + Cᵀ ξ`.
    pub fn c_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim_xi();
        let k = self.num_rows();
        let mut c = DMatrix::zeros(m, k);
        for j in 0..m {
            let row = &self.b_terms[j] - &self.a_terms[j] * x;
            c.set_row(j, &row.transpose());
        }
        c
    }

    pub fn has_constraint_uncertainty(&self) -> bool {
        self.a_terms.iter().any(|a| a.iter().any(|&v| v != 0.0))
            || self.b_terms.iter().any(|b| b.iter().any(|&v| v != 0.0))
    }

    pub fn has_objective_uncertainty(&self) -> bool {
        self.z_matrix.iter().any(|&v| v != 0.0)
    }
}

/// `{x : F x <= g, E x = e, lower <= x <= upper}`
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl Polytope {
    /// All of `R^n`; constraints are added with the builder methods.
    pub fn free(n: usize) -> Self {
        Self {
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    pub fn nonnegative(n: usize) -> Self {
        let mut p = Self::free(n);
        p.lower = vec![Some(0.0); n];
        p
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn with_inequality(mut self, row: &[f64], rhs: f64) -> Self {
        self.ineq_matrix = append_row(&self.ineq_matrix, row);
        self.ineq_rhs = self.ineq_rhs.push(rhs);
        self
    }

    pub fn with_equality(mut self, row: &[f64], rhs: f64) -> Self {
        self.eq_matrix = append_row(&self.eq_matrix, row);
        self.eq_rhs = self.eq_rhs.push(rhs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.upper.len() != n || self.ineq_matrix.ncols() != n || self.eq_matrix.ncols() != n {
            return dim_err("first-stage polytope blocks disagree on the number of variables");
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return dim_err("first-stage polytope rows do not match right-hand sides");
        }
        Ok(())
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let fx = &self.ineq_matrix * x;
        let ex = &self.eq_matrix * x;
        fx.iter().zip(self.ineq_rhs.iter()).all(|(a, b)| a <= &(b + tol))
            && ex.iter().zip(self.eq_rhs.iter()).all(|(a, b)| (a - b).abs() <= tol)
            && x.iter().zip(&self.lower).all(|(v, l)| l.is_none_or(|l| *v >= l - tol))
            && x.iter().zip(&self.upper).all(|(v, u)| u.is_none_or(|u| *v <= u + tol))
    }

    /// Adds the variables and rows of this polytope to `model`.
    pub fn add_to_model(&self, model: &mut Model) -> Vec<Var> {
        let x: Vec<Var> = (0..self.dim())
            .map(|j| model.add_var(self.lower[j], self.upper[j]))
            .collect();
        for (r, g) in self.ineq_rhs.iter().enumerate() {
            model.add_le(LinExpr::dot(&x, self.ineq_matrix.row(r).iter().copied()), *g);
        }
        for (r, e) in self.eq_rhs.iter().enumerate() {
            model.add_eq(LinExpr::dot(&x, self.eq_matrix.row(r).iter().copied()), *e);
        }
        x
    }
}

fn append_row(m: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows() + 1, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    for (j, v) in row.iter().enumerate() {
        out[(m.nrows(), j)] = *v;
    }
    out
}

/// Uncertainty-free recourse equalities `T x + W y = h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecourseEquality {
    pub t: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageProblem {
    pub c: DVector<f64>,
    pub first_stage: Polytope,
    /// Recourse matrix `B` (`k × n_y`).
    pub recourse: DMatrix<f64>,
    pub recourse_eq: Option<RecourseEquality>,
    pub uncertainty: AffineUncertainty,
    pub site: UncertaintySite,
}

impl TwoStageProblem {
    pub fn new(
        c: DVector<f64>,
        first_stage: Polytope,
        recourse: DMatrix<f64>,
        recourse_eq: Option<RecourseEquality>,
        uncertainty: AffineUncertainty,
        site: UncertaintySite,
    ) -> Result<Self> {
        first_stage.validate()?;
        let n = c.len();
        if first_stage.dim() != n || uncertainty.num_first_stage() != n {
            return dim_err("first-stage cost, polytope and A0 disagree on n");
        }
        if recourse.nrows() != uncertainty.num_rows() {
            return dim_err(format!(
                "B has {} rows but b0 has {} entries",
                recourse.nrows(),
                uncertainty.num_rows()
            ));
        }
        if recourse.ncols() != uncertainty.z0.len() {
            return dim_err("B columns must match the recourse cost length");
        }
        if let Some(eq) = &recourse_eq {
            if eq.t.ncols() != n || eq.w.ncols() != recourse.ncols() || eq.t.nrows() != eq.h.len() || eq.w.nrows() != eq.h.len() {
                return dim_err("recourse equality block has inconsistent dimensions");
            }
        }
        match site {
            UncertaintySite::Objective if uncertainty.has_constraint_uncertainty() => {
                return Err(Error::Model(
                    "objective-site problem must have zero A and b terms".into(),
                ))
            }
            UncertaintySite::Constraints if uncertainty.has_objective_uncertainty() => {
                return Err(Error::Model("constraint-site problem must have Z = 0".into()))
            }
            UncertaintySite::Constraints if recourse_eq.is_some() => {
                return Err(Error::Model(
                    "recourse equalities are only supported with objective uncertainty".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            c,
            first_stage,
            recourse,
            recourse_eq,
            uncertainty,
            site,
        })
    }

    pub fn num_first_stage(&self) -> usize {
        self.c.len()
    }

    pub fn num_recourse(&self) -> usize {
        self.recourse.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.recourse.nrows()
    }

    pub fn dim_xi(&self) -> usize {
        self.uncertainty.dim_xi()
    }

    pub fn first_stage_cost(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x)
    }

    /// Adds recourse variables `y >= 0` for one realization with constraint
    /// data `(A, b)`, tying them to first-stage variables `x`.
    pub(crate) fn add_recourse_block(
        &self,
        model: &mut Model,
        x: &[Var],
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Vec<Var> {
        let y = model.add_vars(self.num_recourse(), Some(0.0), None);
        for r in 0..self.num_rows() {
            let lhs = LinExpr::dot(x, a.row(r).iter().copied())
                + LinExpr::dot(&y, self.recourse.row(r).iter().copied());
            model.add_ge(lhs, b[r]);
        }
        if let Some(eq) = &self.recourse_eq {
            for r in 0..eq.h.len() {
                let lhs = LinExpr::dot(x, eq.t.row(r).iter().copied())
                    + LinExpr::dot(&y, eq.w.row(r).iter().copied());
                model.add_eq(lhs, eq.h[r]);
            }
        }
        y
    }
}

/// Training or test realizations `ξ̂^1..ξ̂^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<DVector<f64>>,
}

impl SampleSet {
    pub fn new(samples: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Input("a sample set needs at least one sample".into()));
        };
        let m = first.len();
        if samples.iter().any(|s| s.len() != m) {
            return dim_err("samples have different dimensions");
        }
        Ok(Self { samples })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(DVector::from_vec).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.samples.iter()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for s in &self.samples {
            acc += s;
        }
        acc / self.len() as f64
    }

    pub fn check_dim(&self, m: usize) -> Result<()> {
        if self.dim() != m {
            return dim_err(format!("samples have dimension {}, problem expects {m}", self.dim()));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<DVector<f64>> {
        self.samples
    }
}
