//! Consensus ADMM for `max ||Cp||_2` over `P = ∩_l {p >= 0 : b_lᵀp <= z_l}`.
//!
//! Each column `b_l` of the recourse matrix gets its own copy `g_l`:
//!
//! ```text
//! p   ← (ρ L I - 2CᵀC)⁻¹ ρ Σ_l (g_l + u_l)
//! g_l ← proj_{S_l}(p - u_l)
//! u_l ← u_l + g_l - p
//! ```
//!
//! The iteration is a heuristic for a nonconvex problem. Its output is
//! pushed to a vertex of `P` by successive linearization, so the returned
//! value is always attained by a feasible point.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DualPolyhedron;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    /// Penalty; `None` picks `max(10 σ_max(C)² / L, 1)`.
    pub rho: Option<f64>,
    pub tau: f64,
    pub max_iter: usize,
    /// Number of starting vertices.
    pub starts: usize,
    pub seed: u64,
    pub max_rho_doublings: u32,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: None,
            tau: 1e-6,
            max_iter: 2000,
            starts: 5,
            seed: 0,
            max_rho_doublings: 40,
        }
    }
}

/// Iterates of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub p: DVector<f64>,
    pub g: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub rho: f64,
    pub tau: f64,
}

impl AdmmState {
    fn new(start: &DVector<f64>, copies: usize, rho: f64, tau: f64) -> Self {
        Self {
            p: start.clone(),
            g: vec![start.clone(); copies],
            u: vec![DVector::zeros(start.len()); copies],
            rho,
            tau,
        }
    }

    /// `max_l ||g_l - p||_2`
    pub fn consensus_residual(&self) -> f64 {
        self.g.iter().map(|g| (g - &self.p).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmResult {
    /// Best vertex found.
    pub p: DVector<f64>,
    /// `||C p||_2` at that vertex.
    pub lambda: f64,
    /// Best `||C p||_2` among the unpolished consensus points.
    pub raw_lambda: f64,
    pub iterations: usize,
    pub rho: f64,
    /// Whether every run met the stopping test before `max_iter`.
    pub converged: bool,
}

/// Projection onto `{g >= 0 : bᵀg <= z}`.
fn project_slab(v: &DVector<f64>, b: &DVector<f64>, z: f64) -> DVector<f64> {
    let clip = |mu: f64| v.zip_map(b, |vi, bi| (vi - mu * bi).max(0.0));
    let excess = |mu: f64| b.dot(&clip(mu)) - z;
    if excess(0.0) <= 0.0 {
        return clip(0.0);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while excess(hi) > 0.0 && doublings < 200 {
        hi *= 2.0;
        doublings += 1;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(hi)
}

/// Successive linearization: `p ← argmax_{q ∈ P} (CᵀC p)ᵀ q` until `||Cp||`
/// stops increasing. Returns a vertex of `P` and its norm.
pub fn polish_to_vertex(c: &DMatrix<f64>, poly: &DualPolyhedron, start: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let m = c.tr_mul(c);
    let (_, mut p) = poly.lp_max(&(&m * start))?;
    let mut val = (c * &p).norm();
    for _ in 0..200 {
        let (_, q) = poly.lp_max(&(&m * &p))?;
        let qv = (c * &q).norm();
        if qv > val * (1.0 + 1e-12) + 1e-15 {
            p = q;
            val = qv;
        } else {
            break;
        }
    }
    Ok((p, val))
}

fn factor(m: &DMatrix<f64>, rho: f64, copies: usize) -> Option<Cholesky<f64, Dyn>> {
    let k = m.nrows();
    let sys = DMatrix::identity(k, k) * (rho * copies as f64) - m * 2.0;
    Cholesky::new(sys)
}

/// Runs consensus ADMM from several starting vertices and returns the best
/// polished vertex. `c` is `m × k`.
pub fn norm_max_admm(c: &DMatrix<f64>, poly: &DualPolyhedron, opts: &AdmmOptions) -> Result<AdmmResult> {
    let k = poly.dim();
    if c.ncols() != k {
        return dim_err("C must have one column per dual coordinate");
    }
    let copies = poly.cost().len();
    let m = c.tr_mul(c);
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let sigma2 = eig.eigenvalues[top].max(0.0);
    let mut rho = opts.rho.unwrap_or_else(|| (10.0 * sigma2 / copies as f64).max(1.0));
    let mut chol = factor(&m, rho, copies);
    let mut doublings = 0;
    while chol.is_none() {
        if doublings >= opts.max_rho_doublings {
            return Err(Error::Input(format!(
                "ADMM penalty {rho} does not make the p-update system positive definite"
            )));
        }
        rho *= 2.0;
        doublings += 1;
        chol = factor(&m, rho, copies);
    }
    let chol = chol.expect("factored above");

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let wanted = opts.starts.max(1);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(wanted);
    let push = |v: DVector<f64>, starts: &mut Vec<DVector<f64>>| {
        if starts.len() < wanted && !starts.contains(&v) {
            starts.push(v);
        }
    };
    // coordinates with large column norms in C, then both ends of the
    // dominant direction of CᵀC
    push(poly.lp_max(&(m.diagonal() + DVector::from_element(k, 1e-12)))?.1, &mut starts);
    let v1 = eig.eigenvectors.column(top).into_owned();
    push(poly.lp_max(&v1)?.1, &mut starts);
    push(poly.lp_max(&-v1)?.1, &mut starts);
    let mut draws = 0;
    while starts.len() < wanted && draws < 20 * wanted {
        let dir = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        push(poly.lp_max(&dir)?.1, &mut starts);
        draws += 1;
    }

    let columns: Vec<DVector<f64>> = (0..copies).map(|l| poly.recourse().column(l).into_owned()).collect();
    let z = poly.cost();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut raw_lambda: f64 = 0.0;
    let mut iterations = 0;
    let mut converged = true;
    for start in &starts {
        let mut st = AdmmState::new(start, copies, rho, opts.tau);
        let mut done = false;
        for _ in 0..opts.max_iter {
            iterations += 1;
            let mut rhs = DVector::zeros(k);
            for (g, u) in st.g.iter().zip(&st.u) {
                rhs += g + u;
            }
            let p_new = chol.solve(&(rhs * st.rho));
            for l in 0..copies {
                st.g[l] = project_slab(&(&p_new - &st.u[l]), &columns[l], z[l]);
                st.u[l] += &st.g[l] - &p_new;
            }
            let step = (&p_new - &st.p).norm();
            st.p = p_new;
            if step <= st.tau && st.consensus_residual() <= st.tau {
                done = true;
                break;
            }
        }
        converged &= done;
        raw_lambda = raw_lambda.max((c * &st.p).norm());
        let (v, val) = polish_to_vertex(c, poly, &st.p)?;
        // the start itself is a vertex and a valid candidate
        let start_val = (c * start).norm();
        let (v, val) = if start_val > val { (start.clone(), start_val) } else { (v, val) };
        if best.as_ref().is_none_or(|b| val > b.1) {
            best = Some((v, val));
        }
    }
    let (p, lambda) = best.expect("at least one start");
    Ok(AdmmResult {
        p,
        lambda,
        raw_lambda,
        iterations,
        rho,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint_dr::{enumerate_vertices, norm_max_exact, EnumerationLimits};
    use crate::norm::Norm;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn box_poly() -> DualPolyhedron {
        DualPolyhedron::new(DMatrix::identity(2, 2), DVector::from_vec(vec![7.0, 12.0])).unwrap()
    }

    #[test]
    fn slab_projection_is_feasible_and_optimal() {
        let b = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, -1.0, 4.0]);
        let g = project_slab(&v, &b, 2.0);
        assert!(g.iter().all(|&x| x >= 0.0));
        assert_abs_diff_eq!(b.dot(&g), 2.0, epsilon = 1e-9);
        // KKT: g = max(0, v - μ b) for a single μ >= 0
        let mu = (v[0] - g[0]) / b[0];
        assert_abs_diff_eq!(g[2], (v[2] - mu * b[2]).max(0.0), epsilon = 1e-9);
        let inside = DVector::from_vec(vec![0.5, 0.2, 0.1]);
        assert_eq!(project_slab(&inside, &b, 2.0), inside);
    }

    #[test]
    fn zero_c_gives_zero() {
        let r = norm_max_admm(&DMatrix::zeros(3, 2), &box_poly(), &AdmmOptions::default()).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert!(box_poly().contains(&r.p, 1e-9));
    }

    #[test]
    fn scalar_interval_recovers_endpoint() {
        let poly = DualPolyhedron::new(DMatrix::identity(1, 1), DVector::from_vec(vec![5.0])).unwrap();
        let c = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let r = norm_max_admm(&c, &poly, &AdmmOptions::default()).unwrap();
        assert_abs_diff_eq!(r.p[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lambda, 5.0 * 5.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn never_exceeds_exact_and_usually_matches() {
        let poly = box_poly();
        let vertices = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut equal = 0;
        for _ in 0..100 {
            let c = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-3.0..3.0));
            let exact = norm_max_exact(&c, &vertices, Norm::L2).unwrap().lambda;
            let r = norm_max_admm(&c, &poly, &AdmmOptions::default()).unwrap();
            assert!(r.lambda <= exact + 1e-6);
            if (r.lambda - exact).abs() <= 1e-6 {
                equal += 1;
            }
        }
        assert!(equal >= 90, "{equal}");
    }

    #[test]
    fn polish_reaches_a_vertex() {
        let poly = box_poly();
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]);
        let (p, val) = polish_to_vertex(&c, &poly, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let vertices = enumerate_vertices(&poly, &EnumerationLimits::default()).unwrap();
        assert!(vertices.contains(&p));
        assert_abs_diff_eq!(val, (&c * &p).norm(), epsilon = 1e-12);
    }
}
