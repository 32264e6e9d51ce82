//! Robust problems whose uncertainty sits in the recourse constraints.
//!
//! At a fixed first-stage decision the recourse value is
//! `Q(x, ξ) = max_{p ∈ P} pᵀ(r0 + Cᵀξ)` over the dual polyhedron
//! `P = {p >= 0 : Bᵀp <= z}`, with `r0 = b0 - A0 x` and `C` from
//! [`AffineUncertainty::c_matrix`](crate::problem::AffineUncertainty::c_matrix).
//! The worst-case expectation over the ball is
//! `mean_i Q(x, ξ̂^i) + ε max_{p ∈ P} ||Cp||_*`, a convex maximization in
//! `p` that is attained at a vertex of `P`.

mod admm;
mod cg;
mod master;

pub use admm::{norm_max_admm, polish_to_vertex, AdmmOptions, AdmmResult, AdmmState};
pub use cg::{constraint_generation_solve, CgOptions, CgResult, CgState, CgStatus, CgTraceRow, InnerSolver};
pub use master::{build_mp, solve_corollary_direct, solve_mp, worst_case_cost_constraint, ConstraintDrSolution, MasterProblem};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::lp::{DenseLp, LpStatus, RowSense};
use crate::norm::Norm;
use crate::problem::{SampleSet, TwoStageProblem, UncertaintySite};

/// Two vertices closer than this in the max norm are the same point.
pub const VERTEX_TOL: f64 = 1e-9;

/// `P = {p ∈ R^k : p >= 0, Bᵀp <= z}`, verified nonempty and bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolyhedron {
    b: DMatrix<f64>,
    z: DVector<f64>,
    upper: DVector<f64>,
}

impl DualPolyhedron {
    /// `b` is the recourse matrix (`k × n_y`), `z` the recourse cost.
    pub fn new(b: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        if b.ncols() != z.len() {
            return dim_err("recourse matrix columns must match the cost length");
        }
        let mut poly = Self {
            upper: DVector::zeros(b.nrows()),
            b,
            z,
        };
        for j in 0..poly.dim() {
            let mut e = DVector::zeros(poly.dim());
            e[j] = 1.0;
            poly.upper[j] = poly.lp_max(&e)?.0;
        }
        Ok(poly)
    }

    pub fn from_problem(problem: &TwoStageProblem) -> Result<Self> {
        if problem.site != UncertaintySite::Constraints {
            return Err(Error::Model(
                "the dual polyhedron is defined for constraint-site uncertainty".into(),
            ));
        }
        Self::new(problem.recourse.clone(), problem.uncertainty.z0.clone())
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn recourse(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn cost(&self) -> &DVector<f64> {
        &self.z
    }

    /// Per-coordinate maxima over `P`.
    pub fn upper_bounds(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        p.iter().all(|&v| v >= -tol) && self.b.tr_mul(p).iter().zip(self.z.iter()).all(|(a, z)| *a <= z + tol)
    }

    /// `max rᵀp` over `P`, returning the value and a vertex maximizer.
    pub fn lp_max(&self, r: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let k = self.dim();
        let mut lp = DenseLp::new(k);
        lp.cost = r.iter().map(|v| -v).collect();
        for l in 0..self.z.len() {
            lp.add_row(self.b.column(l).iter().copied().collect(), RowSense::Le, self.z[l]);
        }
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => Ok((-sol.objective, DVector::from_vec(sol.x))),
            LpStatus::Infeasible => Err(Error::DualPolyhedron(
                "dual polyhedron is empty: the recourse problem is unbounded below".into(),
            )),
            LpStatus::Unbounded => Err(Error::DualPolyhedron(
                "dual polyhedron is unbounded: some right-hand side makes the recourse infeasible".into(),
            )),
        }
    }

    /// All constraints as rows of `G p <= h`: first `-p <= 0`, then `Bᵀp <= z`.
    fn inequalities(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.dim();
        let n_y = self.z.len();
        let mut g = DMatrix::zeros(k + n_y, k);
        let mut h = DVector::zeros(k + n_y);
        for j in 0..k {
            g[(j, j)] = -1.0;
        }
        for l in 0..n_y {
            g.row_mut(k + l).copy_from(&self.b.column(l).transpose());
            h[k + l] = self.z[l];
        }
        (g, h)
    }
}

/// A set of points with approximate deduplication.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VertexSet {
    points: Vec<DVector<f64>>,
}

impl VertexSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        self.points.iter().any(|q| (q - p).amax() <= VERTEX_TOL)
    }

    /// Adds `p` unless an equal point is present; returns whether it was new.
    pub fn insert(&mut self, p: DVector<f64>) -> bool {
        if self.contains(&p) {
            false
        } else {
            self.points.push(p);
            true
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.points.iter()
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.points
    }
}

impl FromIterator<DVector<f64>> for VertexSet {
    fn from_iter<I: IntoIterator<Item = DVector<f64>>>(iter: I) -> Self {
        let mut s = Self::new();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationLimits {
    /// Largest `k` for which enumeration is attempted.
    pub max_dim: usize,
    /// Largest number of candidate bases examined.
    pub max_bases: u64,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        Self {
            max_dim: 16,
            max_bases: 5_000_000,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Every vertex of `P`, by solving each choice of `k` active constraints.
pub fn enumerate_vertices(poly: &DualPolyhedron, limits: &EnumerationLimits) -> Result<VertexSet> {
    let k = poly.dim();
    let (g, h) = poly.inequalities();
    let rows = g.nrows();
    if k > limits.max_dim {
        return Err(Error::EnumerationCap(format!(
            "dual polyhedron has dimension {k} > {}; use constraint generation",
            limits.max_dim
        )));
    }
    let bases = binomial(rows, k);
    if bases > limits.max_bases as f64 {
        return Err(Error::EnumerationCap(format!(
            "{bases} candidate bases exceed the limit of {}; use constraint generation",
            limits.max_bases
        )));
    }
    let scale = h.amax().max(1.0);
    let mut out = VertexSet::new();
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let gs = DMatrix::from_fn(k, k, |r, c| g[(pick[r], c)]);
        let hs = DVector::from_fn(k, |r, _| h[pick[r]]);
        let sv = gs.singular_values();
        if sv.min() > 1e-10 * sv.max().max(1.0) {
            if let Some(p) = gs.lu().solve(&hs) {
                let slack = &h - &g * &p;
                if slack.iter().all(|&s| s >= -1e-9 * scale) {
                    out.insert(p.map(|v| if v.abs() < 1e-12 { 0.0 } else { v }));
                }
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if pick[i] < rows - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Maximizer of `||Cp||` over a point set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormMax {
    pub p: DVector<f64>,
    pub lambda: f64,
}

/// `max_{p ∈ points} ||C p||`, where `c` is `m × k`.
pub fn norm_max_exact(c: &DMatrix<f64>, points: &VertexSet, norm: Norm) -> Result<NormMax> {
    let mut best: Option<NormMax> = None;
    for p in points.iter() {
        if p.len() != c.ncols() {
            return dim_err("vertex dimension does not match C");
        }
        let v = norm.of(&(c * p));
        if best.as_ref().is_none_or(|b| v > b.lambda) {
            best = Some(NormMax { p: p.clone(), lambda: v });
        }
    }
    best.ok_or_else(|| Error::Input("empty vertex set".into()))
}

/// Per-sample inner problems `max_{p ∈ P} pᵀ(b(ξ̂^i) - A(ξ̂^i) x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubLpSolution {
    pub s: DVector<f64>,
    pub vertices: Vec<DVector<f64>>,
}

pub fn solve_sub_lps(
    problem: &TwoStageProblem,
    x: &DVector<f64>,
    samples: &SampleSet,
    poly: &DualPolyhedron,
) -> Result<SubLpSolution> {
    samples.check_dim(problem.dim_xi())?;
    if x.len() != problem.num_first_stage() {
        return dim_err("x has the wrong dimension");
    }
    let results: Vec<(f64, DVector<f64>)> = samples
        .samples()
        .par_iter()
        .map(|xi| poly.lp_max(&problem.uncertainty.rhs_at(x, xi)?))
        .collect::<Result<_>>()?;
    let (s, vertices): (Vec<f64>, Vec<DVector<f64>>) = results.into_iter().unzip();
    Ok(SubLpSolution {
        s: DVector::from_vec(s),
        vertices,
    })
}
