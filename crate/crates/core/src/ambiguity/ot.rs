//! Discrete optimal transport with a norm ground cost.

use nalgebra::DMatrix;

use super::DiscreteDistribution;
use crate::conic::{LinExpr, Model, SolverOptions};
use crate::error::{dim_err, Error, Result};
use crate::lp::{DenseLp, LpStatus, RowSense};
use crate::norm::Norm;

/// Transport LPs up to this many cells go through the simplex method.
const SIMPLEX_CELLS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub cost: f64,
    /// `coupling[(i, j)]` is the mass moved from atom `i` of the first
    /// distribution to atom `j` of the second.
    pub coupling: DMatrix<f64>,
}

pub fn cost_matrix(f1: &DiscreteDistribution, f2: &DiscreteDistribution, norm: Norm) -> DMatrix<f64> {
    DMatrix::from_fn(f1.len(), f2.len(), |i, j| norm.of(&(&f1.atoms()[i] - &f2.atoms()[j])))
}

/// 1-Wasserstein distance between two discrete distributions.
pub fn ot_distance(f1: &DiscreteDistribution, f2: &DiscreteDistribution, norm: Norm) -> Result<Transport> {
    if f1.dim() != f2.dim() {
        return dim_err(format!("atom dimensions differ: {} vs {}", f1.dim(), f2.dim()));
    }
    // Solve in a canonical argument order so the value is exactly symmetric.
    if f1.canonical_cmp(f2) == std::cmp::Ordering::Greater {
        let t = ot_distance(f2, f1, norm)?;
        return Ok(Transport {
            cost: t.cost,
            coupling: t.coupling.transpose(),
        });
    }
    let cost = cost_matrix(f1, f2, norm);
    let (n1, n2) = cost.shape();
    if n1 == n2 && f1.is_uniform() && f2.is_uniform() {
        let perm = assignment(&cost);
        let w = 1.0 / n1 as f64;
        let mut coupling = DMatrix::zeros(n1, n2);
        let mut total = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            coupling[(i, j)] = w;
            total += cost[(i, j)];
        }
        return Ok(Transport {
            cost: total * w,
            coupling,
        });
    }
    if n1 * n2 <= SIMPLEX_CELLS {
        transport_simplex(&cost, f1.weights(), f2.weights())
    } else {
        transport_conic(&cost, f1.weights(), f2.weights())
    }
}

fn transport_simplex(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<Transport> {
    let (n1, n2) = cost.shape();
    let mut lp = DenseLp::new(n1 * n2);
    lp.cost = (0..n1 * n2).map(|c| cost[(c / n2, c % n2)]).collect();
    for (i, &ai) in a.iter().enumerate() {
        let mut row = vec![0.0; n1 * n2];
        row[i * n2..(i + 1) * n2].fill(1.0);
        lp.add_row(row, RowSense::Eq, ai);
    }
    for (j, &bj) in b.iter().enumerate() {
        let mut row = vec![0.0; n1 * n2];
        for i in 0..n1 {
            row[i * n2 + j] = 1.0;
        }
        lp.add_row(row, RowSense::Eq, bj);
    }
    let sol = lp.solve();
    if sol.status != LpStatus::Optimal {
        return Err(Error::Input(format!("transport LP ended {:?}", sol.status)));
    }
    Ok(Transport {
        cost: sol.objective,
        coupling: DMatrix::from_fn(n1, n2, |i, j| sol.x[i * n2 + j]),
    })
}

fn transport_conic(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<Transport> {
    let (n1, n2) = cost.shape();
    let mut model = Model::new();
    let k = model.add_vars(n1 * n2, Some(0.0), None);
    let mut obj = LinExpr::new();
    for (c, &v) in k.iter().enumerate() {
        obj.add_term(v, cost[(c / n2, c % n2)]);
    }
    model.set_objective(obj);
    for (i, &ai) in a.iter().enumerate() {
        model.add_eq(LinExpr::dot(&k[i * n2..(i + 1) * n2], std::iter::repeat(1.0)), ai);
    }
    for (j, &bj) in b.iter().enumerate() {
        let col: Vec<_> = (0..n1).map(|i| k[i * n2 + j]).collect();
        model.add_eq(LinExpr::dot(&col, std::iter::repeat(1.0)), bj);
    }
    let (sol, map) = model.solve(&SolverOptions::from_env())?;
    let sol = sol.require_usable("transport problem")?;
    let values = map.values(&sol.primal, &k);
    Ok(Transport {
        cost: sol.objective,
        coupling: DMatrix::from_fn(n1, n2, |i, j| values[i * n2 + j].max(0.0)),
    })
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials). Returns the column assigned to each row.
pub fn assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    // 1-based arrays; index 0 is the virtual root column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}
