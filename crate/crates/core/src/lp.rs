//! Dense two-phase simplex for the small LPs that sit inside the outer
//! algorithms: recourse evaluations, per-sample dual subproblems and small
//! transport problems.
//!
//! The conic interior-point path returns points in the relative interior of
//! the optimal face. Several callers need basic solutions instead (dual
//! vertices are collected as cuts), so those go through here.

/// Row relation in `a·x (sense) rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

/// `minimize cost·x  s.t.  rows[i]·x (senses[i]) rhs[i],  x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct DenseLp {
    pub cost: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Basic solution of a [`DenseLp`].
///
/// `duals` follow the usual sign convention for a minimization: nonnegative
/// on `Ge` rows, nonpositive on `Le` rows, free on `Eq` rows, and
/// `rhs·duals == objective` at optimality.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;

impl DenseLp {
    pub fn new(num_vars: usize) -> Self {
        Self {
            cost: vec![0.0; num_vars],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: RowSense, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.cost.len());
        self.rows.push(coeffs);
        self.senses.push(sense);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> LpSolution {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    n_orig: usize,
    ncols: usize,
    // row-major m x (ncols + 1); last column is the right-hand side
    t: Vec<f64>,
    obj: Vec<f64>,
    obj_val: f64,
    basis: Vec<usize>,
    artificial: Vec<bool>,
    // column holding B^{-1} e_i for row i (its initial basic column)
    unit_col: Vec<usize>,
    flipped: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &DenseLp) -> Self {
        let m = lp.rows.len();
        let n = lp.num_vars();
        let mut flipped = vec![false; m];
        let mut senses = lp.senses.clone();
        for i in 0..m {
            if lp.rhs[i] < 0.0 {
                flipped[i] = true;
                senses[i] = match senses[i] {
                    RowSense::Le => RowSense::Ge,
                    RowSense::Ge => RowSense::Le,
                    RowSense::Eq => RowSense::Eq,
                };
            }
        }
        let mut ncols = n;
        let mut slack_col = vec![usize::MAX; m];
        let mut art_col = vec![usize::MAX; m];
        for i in 0..m {
            match senses[i] {
                RowSense::Le => {
                    slack_col[i] = ncols;
                    ncols += 1;
                }
                RowSense::Ge => {
                    slack_col[i] = ncols;
                    art_col[i] = ncols + 1;
                    ncols += 2;
                }
                RowSense::Eq => {
                    art_col[i] = ncols;
                    ncols += 1;
                }
            }
        }
        let w = ncols + 1;
        let mut t = vec![0.0; m * w];
        let mut artificial = vec![false; ncols];
        let mut basis = vec![0; m];
        let mut unit_col = vec![0; m];
        for i in 0..m {
            let sign = if flipped[i] { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i * w + j] = sign * lp.rows[i][j];
            }
            t[i * w + ncols] = sign * lp.rhs[i];
            match senses[i] {
                RowSense::Le => {
                    t[i * w + slack_col[i]] = 1.0;
                    basis[i] = slack_col[i];
                    unit_col[i] = slack_col[i];
                }
                RowSense::Ge => {
                    t[i * w + slack_col[i]] = -1.0;
                    t[i * w + art_col[i]] = 1.0;
                    artificial[art_col[i]] = true;
                    basis[i] = art_col[i];
                    unit_col[i] = art_col[i];
                }
                RowSense::Eq => {
                    t[i * w + art_col[i]] = 1.0;
                    artificial[art_col[i]] = true;
                    basis[i] = art_col[i];
                    unit_col[i] = art_col[i];
                }
            }
        }
        Self {
            m,
            n_orig: n,
            ncols,
            t,
            obj: vec![0.0; ncols],
            obj_val: 0.0,
            basis,
            artificial,
            unit_col,
            flipped,
            pivots: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.ncols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.ncols + 1) + self.ncols]
    }

    /// Sets the reduced-cost row for the column costs `cost` (length ncols).
    fn price(&mut self, cost: &[f64]) {
        self.obj.copy_from_slice(cost);
        self.obj_val = 0.0;
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..self.ncols {
                    self.obj[j] -= cb * self.at(i, j);
                }
                self.obj_val += cb * self.rhs(i);
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.ncols + 1;
        let pv = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= pv;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for j in 0..w {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (o, p) in self.obj.iter_mut().zip(&prow[..self.ncols]) {
                *o -= f * p;
            }
            self.obj[c] = 0.0;
            self.obj_val += f * prow[self.ncols];
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the current reduced-cost row. Returns false
    /// when the problem is unbounded along some column.
    fn iterate(&mut self, allow: impl Fn(usize) -> bool) -> bool {
        let mut degenerate_run = 0usize;
        let max_pivots = 50 * (self.m + self.ncols) + 1000;
        loop {
            let bland = degenerate_run > 2 * (self.m + 10);
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..self.ncols {
                if !allow(j) {
                    continue;
                }
                let rc = self.obj[j];
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else { return false };
            if best_ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
            if self.pivots > max_pivots {
                // Cycling guard; Bland's rule above makes this unreachable in
                // exact arithmetic.
                return true;
            }
        }
    }

    fn run(mut self, lp: &DenseLp) -> LpSolution {
        let n = self.n_orig;
        // phase 1
        let phase1: Vec<f64> = self
            .artificial
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect();
        self.price(&phase1);
        self.iterate(|_| true);
        let scale = 1.0 + lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if self.obj_val > 1e-8 * scale {
            return self.finish(LpStatus::Infeasible, lp);
        }
        // drive zero-level artificials out of the basis
        for i in 0..self.m {
            if self.artificial[self.basis[i]] {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..self.ncols {
                    if self.artificial[j] {
                        continue;
                    }
                    let a = self.at(i, j).abs();
                    if a > 1e-9 && best.is_none_or(|(_, b)| a > b) {
                        best = Some((j, a));
                    }
                }
                if let Some((j, _)) = best {
                    self.pivot(i, j);
                }
            }
        }
        // phase 2
        let mut cost = vec![0.0; self.ncols];
        cost[..n].copy_from_slice(&lp.cost);
        self.price(&cost);
        let art = self.artificial.clone();
        if !self.iterate(|j| !art[j]) {
            return self.finish(LpStatus::Unbounded, lp);
        }
        self.finish(LpStatus::Optimal, lp)
    }

    fn finish(self, status: LpStatus, lp: &DenseLp) -> LpSolution {
        let n = self.n_orig;
        let mut x = vec![0.0; n];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < n {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        let duals = if status == LpStatus::Optimal {
            (0..self.m)
                .map(|i| {
                    let y = -self.obj[self.unit_col[i]];
                    if self.flipped[i] {
                        -y
                    } else {
                        y
                    }
                })
                .collect()
        } else {
            vec![0.0; self.m]
        };
        let objective = match status {
            LpStatus::Optimal => lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum(),
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
        };
        LpSolution {
            status,
            x,
            duals,
            objective,
            pivots: self.pivots,
        }
    }
}
