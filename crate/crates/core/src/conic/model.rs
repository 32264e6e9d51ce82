use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use super::{solve, Cone, ConicProgram, ConicSolution, SolverOptions, SparseMatrix};
use crate::error::Result;
use crate::lp::RowSense;
use crate::norm::Norm;

/// Handle to a model variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ coeff·var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(var: Var, coeff: f64) -> Self {
        Self {
            terms: vec![(var, coeff)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, var: Var, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((var, coeff));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `Σ coeffs[j]·vars[j]`
    pub fn dot(vars: &[Var], coeffs: impl IntoIterator<Item = f64>) -> Self {
        let mut e = Self::new();
        for (&v, c) in vars.iter().zip(coeffs) {
            e.add_term(v, c);
        }
        e
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs;
        self
    }
}

impl<T: Into<LinExpr>> AddAssign<T> for LinExpr {
    fn add_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: T) -> LinExpr {
        self + (-rhs.into())
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

/// High-level model: bounded variables, `<=`/`>=`/`=` rows and
/// second-order cone rows. Turned into a [`ConicProgram`] by
/// [`Model::canonicalize`].
#[derive(Debug, Clone, Default)]
pub struct Model {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    objective: LinExpr,
    // each row reads `expr (sense) 0`
    rows: Vec<(LinExpr, RowSense)>,
    // (t, u) with t >= ||u||_2
    socs: Vec<(LinExpr, Vec<LinExpr>)>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lower: Option<f64>, upper: Option<f64>) -> Var {
        self.lower.push(lower);
        self.upper.push(upper);
        Var(self.lower.len() - 1)
    }

    pub fn add_free_var(&mut self) -> Var {
        self.add_var(None, None)
    }

    pub fn add_nonneg_var(&mut self) -> Var {
        self.add_var(Some(0.0), None)
    }

    pub fn add_vars(&mut self, count: usize, lower: Option<f64>, upper: Option<f64>) -> Vec<Var> {
        (0..count).map(|_| self.add_var(lower, upper)).collect()
    }

    pub fn set_objective(&mut self, expr: impl Into<LinExpr>) {
        self.objective = expr.into();
    }

    pub fn add_le(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.rows.push((lhs.into() - rhs.into(), RowSense::Le));
    }

    pub fn add_ge(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.rows.push((lhs.into() - rhs.into(), RowSense::Ge));
    }

    pub fn add_eq(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.rows.push((lhs.into() - rhs.into(), RowSense::Eq));
    }

    /// `t >= ||(u_1, ..., u_d)||_2`
    pub fn add_soc(&mut self, t: impl Into<LinExpr>, u: Vec<LinExpr>) {
        self.socs.push((t.into(), u));
    }

    /// `t >= ||u||` for any supported norm. L2 becomes one second-order cone;
    /// Linf becomes `2d` linear rows; L1 introduces `d` auxiliary variables.
    pub fn add_norm_le(&mut self, t: impl Into<LinExpr>, u: Vec<LinExpr>, norm: Norm) {
        let t = t.into();
        match norm {
            Norm::L2 => self.add_soc(t, u),
            Norm::Linf => {
                self.add_ge(t.clone(), 0.0);
                for e in u {
                    self.add_ge(t.clone(), e.clone());
                    self.add_ge(t.clone(), -e);
                }
            }
            Norm::L1 => {
                let mut sum = LinExpr::new();
                for e in u {
                    let a = self.add_nonneg_var();
                    self.add_ge(a, e.clone());
                    self.add_ge(a, -e);
                    sum.add_term(a, 1.0);
                }
                self.add_ge(t, sum);
            }
        }
    }

    /// Converts to canonical form. Variables keep their indices, so the
    /// returned map is the identity; the objective constant is carried in
    /// `objective_offset`.
    pub fn canonicalize(&self) -> (ConicProgram, VarMap) {
        let n = self.num_vars();
        let mut objective = vec![0.0; n];
        for &(v, c) in &self.objective.terms {
            objective[v.0] += c;
        }

        let n_eq = self.rows.iter().filter(|r| r.1 == RowSense::Eq).count();
        let mut eq_matrix = SparseMatrix::new(n_eq, n);
        let mut eq_rhs = Vec::with_capacity(n_eq);

        let bound_rows = self.lower.iter().filter(|b| b.is_some()).count()
            + self.upper.iter().filter(|b| b.is_some()).count();
        let n_lin = self.rows.len() - n_eq + bound_rows;
        let n_soc: usize = self.socs.iter().map(|s| s.1.len() + 1).sum();
        let mut g = SparseMatrix::new(n_lin + n_soc, n);
        let mut h = Vec::with_capacity(n_lin + n_soc);

        // h - G v = sign * expr(v)  ⇔  h = sign*c, G = -sign*a
        let push_cone_row = |g: &mut SparseMatrix, h: &mut Vec<f64>, e: &LinExpr, sign: f64| {
            let r = h.len();
            for &(v, c) in &e.terms {
                g.push(r, v.0, -sign * c);
            }
            h.push(sign * e.constant);
        };

        for (e, sense) in &self.rows {
            match sense {
                RowSense::Eq => {
                    let r = eq_rhs.len();
                    for &(v, c) in &e.terms {
                        eq_matrix.push(r, v.0, c);
                    }
                    eq_rhs.push(-e.constant);
                }
                RowSense::Ge => push_cone_row(&mut g, &mut h, e, 1.0),
                RowSense::Le => push_cone_row(&mut g, &mut h, e, -1.0),
            }
        }
        for j in 0..n {
            if let Some(l) = self.lower[j] {
                let r = h.len();
                g.push(r, j, -1.0);
                h.push(-l);
            }
            if let Some(u) = self.upper[j] {
                let r = h.len();
                g.push(r, j, 1.0);
                h.push(u);
            }
        }
        let mut cones = Vec::new();
        if n_lin > 0 {
            cones.push(Cone::NonNegative(n_lin));
        }
        for (t, u) in &self.socs {
            push_cone_row(&mut g, &mut h, t, 1.0);
            for e in u {
                push_cone_row(&mut g, &mut h, e, 1.0);
            }
            cones.push(Cone::SecondOrder(u.len() + 1));
        }
        debug_assert_eq!(h.len(), n_lin + n_soc);

        let program = ConicProgram {
            num_vars: n,
            objective,
            objective_offset: self.objective.constant,
            eq_matrix,
            eq_rhs,
            cone_matrix: g,
            cone_rhs: h,
            cones,
        };
        (program, VarMap { index: (0..n).collect() })
    }

    /// Canonicalizes and solves in one step.
    pub fn solve(&self, opts: &SolverOptions) -> Result<(ConicSolution, VarMap)> {
        let (program, map) = self.canonicalize();
        Ok((solve(&program, opts)?, map))
    }
}

/// Model variable → canonical variable index.
#[derive(Debug, Clone)]
pub struct VarMap {
    index: Vec<usize>,
}

impl VarMap {
    pub fn canonical(&self, v: Var) -> usize {
        self.index[v.0]
    }

    pub fn value(&self, canonical: &[f64], v: Var) -> f64 {
        canonical[self.index[v.0]]
    }

    pub fn values(&self, canonical: &[f64], vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.value(canonical, v)).collect()
    }

    /// Model-order values from a canonical vector.
    pub fn to_model(&self, canonical: &[f64]) -> Vec<f64> {
        self.index.iter().map(|&i| canonical[i]).collect()
    }

    pub fn to_canonical(&self, model_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.index.len()];
        for (m, &c) in self.index.iter().enumerate() {
            out[c] = model_values[m];
        }
        out
    }
}
