//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a gating criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{constraint_instance, objective_instance, random_first_stage, uniform_samples, uniform_vector};
use wdr_core::ambiguity::{ot_distance, DiscreteDistribution, WassersteinBall};
use wdr_core::bench::{
    build_material_order, build_portfolio, generate_gaussian_samples, out_of_sample, solve_dr, tune_epsilon,
    ConstraintMethod, MaterialOrder, ReturnEstimator, SyntheticMarket,
};
use wdr_core::conic::{cone_violation, solve, Cone, ConicProgram, SolveStatus, SolverOptions, SparseMatrix};
use wdr_core::constraint_dr::{
    constraint_generation_solve, enumerate_vertices, solve_corollary_direct, solve_mp, worst_case_cost_constraint,
    CgOptions, CgStatus, DualPolyhedron, EnumerationLimits, InnerSolver, VertexSet,
};
use wdr_core::objective_dr::{solve_objective_dr, worst_case_cost_objective, RecourseCoupling};
use wdr_core::problem::{saa_solve, solve_recourse, SampleSet, TwoStageProblem};
use wdr_core::worst_case::{
    recourse_supergradient, verify_worst_case, worst_case_constraint, worst_case_objective, AscentOptions,
};
use wdr_core::{Norm, Result};

type Check = Result<(bool, String)>;
/// Id, name, check and whether a failure is gating.
type Criterion = (&'static str, &'static str, fn() -> Check, bool);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn l2_ball(eps: f64) -> WassersteinBall {
    WassersteinBall::with_radius(eps, Norm::L2).unwrap()
}

fn all_vertices(problem: &TwoStageProblem) -> Result<VertexSet> {
    enumerate_vertices(&DualPolyhedron::from_problem(problem)?, &EnumerationLimits::default())
}

fn tight_cg(gap_tol: f64) -> CgOptions {
    CgOptions {
        gap_tol,
        ..CgOptions::default()
    }
}

/// Small random instance of either site with its training samples.
fn small_constraint(r: &mut ChaCha8Rng) -> (TwoStageProblem, SampleSet) {
    let (n, k, m) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=5));
    let p = constraint_instance(r, n, k, m);
    let count = r.random_range(1..=10);
    let s = uniform_samples(r, count, m);
    (p, s)
}

fn small_objective(r: &mut ChaCha8Rng, max_dim: usize, max_n: usize) -> (TwoStageProblem, SampleSet) {
    let (n, k, m) = (
        r.random_range(1..=max_dim),
        r.random_range(1..=max_dim),
        r.random_range(1..=max_dim),
    );
    let p = objective_instance(r, n, k, m);
    let count = r.random_range(1..=max_n);
    let s = uniform_samples(r, count, m);
    (p, s)
}

fn two_dim_samples(n: usize, seed: u64) -> SampleSet {
    generate_gaussian_samples(&[0.0; 4], &MaterialOrder::two_dim_variance(), n, seed).unwrap()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let ball = l2_ball(1e-10);
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, s) = small_constraint(&mut r);
        let saa = saa_solve(&p, &s, &opts)?;
        let dr = constraint_generation_solve(&p, &s, &ball, &tight_cg(1e-9))?;
        worst = worst.max(rel(dr.objective, saa.value));

        let (p, s) = small_objective(&mut r, 5, 10);
        let saa = saa_solve(&p, &s, &opts)?;
        let dr = solve_objective_dr(&p, &s, &ball, RecourseCoupling::PerSample, &opts)?;
        worst = worst.max(rel(dr.objective, saa.value));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-6 && secs < 10.0,
        format!("40 instances, max rel diff {worst:.2e}, {secs:.1} s"),
    ))
}

fn criterion_2() -> Check {
    let opts = SolverOptions::default();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, s) = small_constraint(&mut r);
        let eps = r.random_range(0.05..1.0);
        let x = random_first_stage(&mut r, p.num_first_stage(), 10.0);
        let verts = all_vertices(&p)?;
        let got = worst_case_cost_constraint(&p, &x, &s, &l2_ball(eps), &verts, &opts)?;
        let mean_q: f64 = s
            .iter()
            .map(|xi| solve_recourse(&p, &x, xi).map(|q| q.value))
            .sum::<Result<f64>>()?
            / s.len() as f64;
        let c = p.uncertainty.c_matrix(&x);
        let lam = verts.iter().map(|v| (&c * v).norm()).fold(0.0, f64::max);
        worst = worst.max(rel(got.beta, mean_q + eps * lam));
    }

    let p = build_material_order(&MaterialOrder::two_dim())?;
    let x = DVector::from_vec(vec![42.7, 57.2]);
    let got = worst_case_cost_constraint(&p, &x, &two_dim_samples(500, 7), &l2_ball(0.01), &all_vertices(&p)?, &opts)?;
    let closed = (49.0 * (42.7f64.powi(2) + 1.0) + 144.0 * (57.2f64.powi(2) + 1.0)).sqrt();
    let lam_err = rel(got.lambda, closed);
    Ok((
        worst <= 1e-6 && lam_err <= 1e-6 && (got.lambda - 748.78).abs() < 0.01,
        format!("20 instances, max rel err {worst:.2e}; two-product lambda* = {:.3}", got.lambda),
    ))
}

const TABLE_EPS: [f64; 6] = [0.01, 0.21, 0.41, 0.61, 0.81, 1.0];
const TABLE_X: [(f64, f64); 6] = [
    (42.7, 57.2),
    (41.2, 50.8),
    (38.7, 41.5),
    (36.2, 32.4),
    (34.7, 26.4),
    (33.4, 22.5),
];

fn criterion_3() -> Check {
    let p = build_material_order(&MaterialOrder::two_dim())?;
    let verts = all_vertices(&p)?;
    // the optimum is flat in x, so both solves run at a tighter tolerance
    let solver = SolverOptions {
        tol_feas: 1e-11,
        tol_gap: 1e-11,
        ..SolverOptions::default()
    };
    let opts = CgOptions {
        inner: InnerSolver::Exact,
        solver,
        ..tight_cg(1e-11)
    };
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let s = two_dim_samples(500, 300 + seed);
        for eps in TABLE_EPS {
            let ball = l2_ball(eps);
            let cg = constraint_generation_solve(&p, &s, &ball, &opts)?;
            let direct = solve_corollary_direct(&p, &s, &ball, &verts, &solver)?;
            worst = worst.max((&cg.x - &direct.x).amax());
        }
    }
    Ok((worst <= 1e-4, format!("3 sample sets x 6 radii, max |x_cg - x_direct| = {worst:.2e}")))
}

fn desk_check_3() -> Check {
    let p = build_material_order(&MaterialOrder::two_dim())?;
    let trials = 20;
    let mut ok = true;
    let mut parts = Vec::new();
    for (eps, (t1, t2)) in TABLE_EPS.iter().zip(TABLE_X) {
        let ball = l2_ball(*eps);
        let mut mean = [0.0; 2];
        let mut within = 0;
        for trial in 0..trials {
            let x = constraint_generation_solve(&p, &two_dim_samples(500, 1000 + trial), &ball, &CgOptions::default())?.x;
            mean[0] += x[0] / trials as f64;
            mean[1] += x[1] / trials as f64;
            within += ((x[0] - t1).abs() <= 2.0 && (x[1] - t2).abs() <= 2.0) as usize;
        }
        ok &= (mean[0] - t1).abs() <= 2.0 && (mean[1] - t2).abs() <= 2.0;
        parts.push(format!("eps {eps}: ({:.1}, {:.1}) vs ({t1}, {t2}), {within}/{trials}", mean[0], mean[1]));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let ball = l2_ball(0.1);
    let opts = CgOptions::default();
    let p = build_material_order(&MaterialOrder::two_dim())?;
    let mut ok = true;
    let mut worst = (0.0f64, 0.0f64);
    for n in [10, 20, 30, 50, 100, 200, 300, 500, 1000] {
        let (mut it, mut nv) = (0.0, 0.0);
        for trial in 0..100 {
            let r = constraint_generation_solve(&p, &two_dim_samples(n, 10_000 * n as u64 + trial), &ball, &opts)?;
            ok &= r.status == CgStatus::Converged;
            it += r.state.iteration as f64;
            nv += r.state.vertices.len() as f64;
        }
        let (it, nv) = (it / 100.0, nv / 100.0);
        ok &= it <= 5.0 && nv <= 4.0;
        worst = (worst.0.max(it), worst.1.max(nv));
    }

    let spec = MaterialOrder::high_dim();
    let p = build_material_order(&spec)?;
    let mean = vec![0.0; spec.dim_xi()];
    let var = MaterialOrder::high_dim_variance();
    let mut high = (0.0f64, 0.0f64, 0.0f64);
    for n in [10, 50, 100, 500] {
        let (mut it, mut nv) = (0.0, 0.0);
        for trial in 0..10 {
            let s = generate_gaussian_samples(&mean, &var, n, 20_000 * n as u64 + trial)?;
            let r = constraint_generation_solve(&p, &s, &ball, &opts)?;
            ok &= r.status == CgStatus::Converged && r.state.gap() <= 1e-4 * r.state.ub.abs().max(1.0);
            high.2 = high.2.max(r.state.vertices.len() as f64);
            it += r.state.iteration as f64;
            nv += r.state.vertices.len() as f64;
        }
        let (it, nv) = (it / 10.0, nv / 10.0);
        ok &= it <= 15.0 && nv <= 300.0;
        high = (high.0.max(it), high.1.max(nv), high.2);
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    Ok((
        ok,
        format!(
            "2-D max mean iterations {:.2}, vertices {:.2}; 20-D max mean iterations {:.2}, vertices {:.1} (max {}); {secs:.0} s",
            worst.0, worst.1, high.0, high.1, high.2
        ),
    ))
}

fn criterion_5() -> Check {
    let opts = SolverOptions::default();
    let mut r = rng(5);
    let (mut w1_excess, mut c_gap, mut o_ratio) = (f64::NEG_INFINITY, 0.0f64, f64::INFINITY);
    let mut ok = true;
    let mut count = 0;

    let mut constraint_cases: Vec<(TwoStageProblem, SampleSet, f64)> = (0..15)
        .map(|_| {
            let (p, s) = small_constraint(&mut r);
            (p, s, r.random_range(0.05..1.0))
        })
        .collect();
    let two_dim = build_material_order(&MaterialOrder::two_dim())?;
    for (i, eps) in [0.01, 0.41, 1.0].into_iter().enumerate() {
        constraint_cases.push((two_dim.clone(), two_dim_samples(500, 50 + i as u64), eps));
    }
    for (p, s, eps) in &constraint_cases {
        let ball = l2_ball(*eps);
        let sol = constraint_generation_solve(p, s, &ball, &tight_cg(1e-9))?;
        let rep = worst_case_constraint(p, &sol.x, s, &ball, &all_vertices(p)?)?;
        let v = verify_worst_case(&rep, s, &ball, p, &sol.x)?;
        w1_excess = w1_excess.max(v.w1 - eps);
        c_gap = c_gap.max(rel(v.attained, rep.beta));
        ok &= v.pass() && v.w1 <= eps + 1e-6 && rel(v.attained, rep.beta) <= 1e-6;
        count += 1;
    }
    for _ in 0..20 {
        let (p, s) = small_objective(&mut r, 3, 5);
        let ball = l2_ball(r.random_range(0.05..1.0));
        let sol = solve_objective_dr(&p, &s, &ball, RecourseCoupling::PerSample, &opts)?;
        let rep = worst_case_objective(&p, &sol.x, &s, &ball, &AscentOptions::default())?;
        let v = verify_worst_case(&rep, &s, &ball, &p, &sol.x)?;
        w1_excess = w1_excess.max(v.w1 - ball.radius());
        if rep.beta.abs() > 1e-6 {
            o_ratio = o_ratio.min(v.attained / rep.beta);
        }
        ok &= v.pass() && v.w1 <= ball.radius() + 1e-6 && v.attained >= 0.99 * rep.beta - 1e-6;
        count += 1;
    }
    Ok((
        ok,
        format!(
            "{count} instances, max W1 - eps {w1_excess:.1e}, constraint max rel gap {c_gap:.1e}, objective min attained/beta {o_ratio:.4}"
        ),
    ))
}

/// Minimum transport cost over all basic feasible solutions of the
/// transportation polytope.
fn exhaustive_transport(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    let cells = n1 * n2;
    let rank = n1 + n2 - 1;
    let mut rows = DMatrix::zeros(rank, cells);
    let mut rhs = DVector::zeros(rank);
    for i in 0..n1 {
        for j in 0..n2 {
            rows[(i, i * n2 + j)] = 1.0;
        }
        rhs[i] = a[i];
    }
    for j in 0..n2 - 1 {
        for i in 0..n1 {
            rows[(n1 + j, i * n2 + j)] = 1.0;
        }
        rhs[n1 + j] = b[j];
    }
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..rank).collect();
    loop {
        let basis = DMatrix::from_fn(rank, rank, |r, c| rows[(r, subset[c])]);
        if let Some(v) = basis.lu().solve(&rhs) {
            if v.iter().all(|t| t.is_finite() && *t >= -1e-12) {
                let c: f64 = subset.iter().zip(v.iter()).map(|(&k, t)| cost[(k / n2, k % n2)] * t).sum();
                best = best.min(c);
            }
        }
        // next combination in lexicographic order
        let Some(pos) = (0..rank).rev().find(|&i| subset[i] < cells - rank + i) else {
            return best;
        };
        subset[pos] += 1;
        for i in pos + 1..rank {
            subset[i] = subset[i - 1] + 1;
        }
    }
}

fn random_distribution(r: &mut ChaCha8Rng, dim: usize) -> DiscreteDistribution {
    let n = r.random_range(1..=4);
    let atoms = (0..n).map(|_| uniform_vector(r, dim, -2.0, 2.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    DiscreteDistribution::new(atoms, w.iter().map(|v| v / total).collect()).unwrap()
}

fn criterion_6() -> Check {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let dim = r.random_range(1..=3);
        let f1 = random_distribution(&mut r, dim);
        let f2 = random_distribution(&mut r, dim);
        let norm = [Norm::L1, Norm::L2, Norm::Linf][i % 3];
        let cost = DMatrix::from_fn(f1.len(), f2.len(), |a, b| norm.of(&(&f1.atoms()[a] - &f2.atoms()[b])));
        let oracle = exhaustive_transport(&cost, f1.weights(), f2.weights());
        worst = worst.max((ot_distance(&f1, &f2, norm)?.cost - oracle).abs());
    }
    Ok((worst <= 1e-8, format!("50 pairs, max abs diff {worst:.2e}")))
}

fn sparse(m: &DMatrix<f64>) -> SparseMatrix {
    let mut s = SparseMatrix::new(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if m[(r, c)] != 0.0 {
                s.push(r, c, m[(r, c)]);
            }
        }
    }
    s
}

/// Random cone blocks with a complementary pair `(s, z)`, `sᵀz = 0`.
fn complementary_blocks(r: &mut ChaCha8Rng) -> (Vec<Cone>, Vec<f64>, Vec<f64>) {
    let mut cones = Vec::new();
    let (mut s, mut z) = (Vec::new(), Vec::new());
    for _ in 0..r.random_range(1..=4) {
        if r.random_bool(0.5) {
            let d = r.random_range(1..=3);
            cones.push(Cone::NonNegative(d));
            for _ in 0..d {
                let v = r.random_range(0.1..2.0);
                if r.random_bool(0.5) {
                    s.push(v);
                    z.push(0.0);
                } else {
                    s.push(0.0);
                    z.push(v);
                }
            }
        } else {
            let d = r.random_range(2..=4);
            cones.push(Cone::SecondOrder(d));
            let u = uniform_vector(r, d - 1, -1.0, 1.0);
            let u = &u / u.norm().max(1e-9);
            let (alpha, beta) = (r.random_range(0.1..2.0), r.random_range(0.1..2.0));
            match r.random_range(0..3) {
                0 => {
                    s.push(alpha * 1.5);
                    s.extend(u.iter().map(|t| alpha * t));
                    z.extend(std::iter::repeat_n(0.0, d));
                }
                1 => {
                    s.extend(std::iter::repeat_n(0.0, d));
                    z.push(beta * 1.5);
                    z.extend(u.iter().map(|t| beta * t));
                }
                _ => {
                    s.push(alpha);
                    s.extend(u.iter().map(|t| alpha * t));
                    z.push(beta);
                    z.extend(u.iter().map(|t| -beta * t));
                }
            }
        }
    }
    (cones, s, z)
}

fn criterion_7() -> Check {
    let opts = SolverOptions::default();
    let mut r = rng(7);
    let mut ok = true;
    let (mut worst_obj, mut worst_weak, mut worst_res) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let m_eq = r.random_range(0..=3);
        let (cones, s, z) = complementary_blocks(&mut r);
        let m = s.len();
        let g = DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m_eq, n, |_, _| r.random_range(-1.0..1.0));
        let v = uniform_vector(&mut r, n, -1.0, 1.0);
        let y = uniform_vector(&mut r, m_eq, -1.0, 1.0);
        let (s, z) = (DVector::from_vec(s), DVector::from_vec(z));
        let c = -(a.transpose() * &y) - g.transpose() * &z;
        let program = ConicProgram {
            num_vars: n,
            objective: c.iter().copied().collect(),
            objective_offset: 0.0,
            eq_matrix: sparse(&a),
            eq_rhs: (&a * &v).iter().copied().collect(),
            cone_matrix: sparse(&g),
            cone_rhs: (&s + &g * &v).iter().copied().collect(),
            cones: cones.clone(),
        };
        let planted = c.dot(&v);
        let sol = solve(&program, &opts)?;
        ok &= sol.is_optimal();
        let scale = planted.abs().max(1.0);
        worst_obj = worst_obj.max(rel(sol.objective, planted));
        worst_weak = worst_weak.max((sol.dual_objective - sol.objective) / scale);
        worst_res = worst_res
            .max(sol.residuals.primal)
            .max(sol.residuals.dual)
            .max(cone_violation(&cones, &sol.dual_cone));
    }
    ok &= worst_obj <= 1e-6 && worst_weak <= 1e-6 && worst_res <= 1e-6;

    // infeasible: v >= 0 with a positive row summing to a negative value
    let mut worst_farkas: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(1..=6);
        let row = uniform_vector(&mut r, n, 0.1, 1.0);
        let program = ConicProgram {
            num_vars: n,
            objective: uniform_vector(&mut r, n, -1.0, 1.0).iter().copied().collect(),
            objective_offset: 0.0,
            eq_matrix: sparse(&DMatrix::from_row_slice(1, n, row.as_slice())),
            eq_rhs: vec![-r.random_range(0.5..2.0)],
            cone_matrix: sparse(&-DMatrix::<f64>::identity(n, n)),
            cone_rhs: vec![0.0; n],
            cones: vec![Cone::NonNegative(n)],
        };
        let sol = solve(&program, &opts)?;
        ok &= sol.status == SolveStatus::Infeasible;
        match sol.farkas(&program) {
            Some((resid, value)) => {
                ok &= resid <= 1e-7 && value < 0.0 && cone_violation(&program.cones, &sol.dual_cone) <= 1e-7;
                worst_farkas = worst_farkas.max(resid);
            }
            None => ok = false,
        }
    }
    Ok((
        ok,
        format!(
            "100 planted + 20 infeasible, max rel obj err {worst_obj:.1e}, max (dual - primal) {worst_weak:.1e}, max residual {worst_res:.1e}, max Farkas residual {worst_farkas:.1e}"
        ),
    ))
}

fn criterion_8() -> Check {
    let mut r = rng(8);
    let h = 1e-5;
    let (mut found, mut tried) = (0, 0);
    let mut worst: f64 = 0.0;
    while found < 50 && tried < 1000 {
        tried += 1;
        let (n, k, m) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
        let p = objective_instance(&mut r, n, k, m);
        let x = random_first_stage(&mut r, n, 3.0);
        let xi = uniform_vector(&mut r, m, -1.0, 1.0);
        let (q0, g) = recourse_supergradient(&p, &x, &xi)?;
        let q = |e: &DVector<f64>| solve_recourse(&p, &x, e).map(|s| s.value);
        let mut fd = DVector::zeros(m);
        let mut smooth = true;
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = h;
            let (up, down) = (q(&(&xi + &e))?, q(&(&xi - &e))?);
            let (fwd, bwd) = ((up - q0) / h, (q0 - down) / h);
            smooth &= (fwd - bwd).abs() <= 1e-6 * fwd.abs().max(1.0);
            fd[j] = (up - down) / (2.0 * h);
        }
        if !smooth {
            continue;
        }
        found += 1;
        worst = worst.max((&g - &fd).amax() / g.amax().max(1.0));
    }
    Ok((
        found == 50 && worst <= 1e-3,
        format!("{found} non-degenerate points ({tried} drawn), max rel err {worst:.1e}"),
    ))
}

fn criterion_9() -> Check {
    let opts = SolverOptions::default();
    let mut r = rng(9);
    let grid: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
    let mut ok = true;
    let (mut worst_mono, mut worst_conc) = (0.0f64, 0.0f64);
    let mut check_curve = |betas: &[f64], ok: &mut bool| {
        let scale = betas.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        for w in betas.windows(2) {
            worst_mono = worst_mono.max((w[0] - w[1]) / scale);
        }
        for w in betas.windows(3) {
            worst_conc = worst_conc.max((w[0] + w[2] - 2.0 * w[1]) / scale);
        }
        *ok &= worst_mono <= 1e-7 && worst_conc <= 1e-7;
    };
    for _ in 0..10 {
        let (p, s) = small_constraint(&mut r);
        let x = random_first_stage(&mut r, p.num_first_stage(), 10.0);
        let verts = all_vertices(&p)?;
        let betas = grid
            .iter()
            .map(|&e| worst_case_cost_constraint(&p, &x, &s, &l2_ball(e), &verts, &opts).map(|b| b.beta))
            .collect::<Result<Vec<_>>>()?;
        check_curve(&betas, &mut ok);

        let (p, s) = small_objective(&mut r, 4, 8);
        let x = random_first_stage(&mut r, p.num_first_stage(), 3.0);
        let betas = grid
            .iter()
            .map(|&e| {
                worst_case_cost_objective(&p, &x, &s, &l2_ball(e), RecourseCoupling::PerSample, &opts).map(|b| b.beta)
            })
            .collect::<Result<Vec<_>>>()?;
        check_curve(&betas, &mut ok);
    }

    let mut worst_mp: f64 = 0.0;
    for _ in 0..10 {
        let (p, s) = small_constraint(&mut r);
        let ball = l2_ball(r.random_range(0.05..1.0));
        let mut verts: Vec<DVector<f64>> = all_vertices(&p)?.iter().cloned().collect();
        verts.shuffle(&mut r);
        let mut subset = VertexSet::new();
        let mut prev = f64::NEG_INFINITY;
        for v in verts.into_iter().take(8) {
            subset.insert(v);
            let val = solve_mp(&p, &s, &ball, &subset, &opts)?.objective;
            worst_mp = worst_mp.max((prev - val) / val.abs().max(1.0));
            prev = val;
        }
    }
    ok &= worst_mp <= 1e-7;

    let mut worst_trace: f64 = 0.0;
    let mut traces = 0;
    let two_dim = build_material_order(&MaterialOrder::two_dim())?;
    for i in 0..12 {
        let (p, s) = if i < 10 {
            small_constraint(&mut r)
        } else {
            (two_dim.clone(), two_dim_samples(500, 90 + i))
        };
        let ball = l2_ball(r.random_range(0.05..1.0));
        let res = constraint_generation_solve(&p, &s, &ball, &tight_cg(1e-8))?;
        for w in res.state.trace.windows(2) {
            ok &= w[1].lb >= w[0].lb && w[1].ub <= w[0].ub;
        }
        for row in &res.state.trace {
            worst_trace = worst_trace.max((row.lb - row.ub) / row.ub.abs().max(1.0));
        }
        traces += 1;
    }
    ok &= worst_trace <= 1e-8;
    Ok((
        ok,
        format!(
            "beta: max decrease {worst_mono:.1e}, max convexity {worst_conc:.1e}; MP max decrease {worst_mp:.1e}; {traces} CG traces, max (LB - UB) rel {worst_trace:.1e}"
        ),
    ))
}

fn criterion_10() -> Check {
    let theta = 0.01;
    let market = SyntheticMarket::default();
    let grid = [1e-4, 5e-4, 1e-3, 2e-3, 5e-3];
    let opts = SolverOptions::default();
    let cg = CgOptions::default();
    let trials = 100;
    let (mut no_worse, mut better) = (0, 0);
    let mut chosen = vec![0usize; grid.len()];
    for trial in 0..trials {
        let train = market.sample(100, 40_000 + trial)?;
        let test = market.sample(2000, 80_000 + trial)?;
        let problem = build_portfolio(theta, &ReturnEstimator::Mean.estimate(&train))?;
        let (eps, _) = tune_epsilon(&problem, &train, &grid, 3, Norm::L2, ConstraintMethod::Cg, &cg, &opts)?;
        chosen[grid.iter().position(|g| *g == eps).unwrap()] += 1;
        let dr = solve_dr(&problem, &train, &l2_ball(eps), ConstraintMethod::Cg, &cg, &opts)?;
        let saa = saa_solve(&problem, &train, &opts)?;
        let dr_loss = out_of_sample(&problem, &dr.x, &test)?.value;
        let saa_loss = out_of_sample(&problem, &saa.x, &test)?.value;
        no_worse += (dr_loss <= saa_loss + 1e-9 * saa_loss.abs().max(1.0)) as usize;
        better += (dr_loss < saa_loss - 1e-9 * saa_loss.abs().max(1.0)) as usize;
    }
    let frac = no_worse as f64 / trials as f64;
    Ok((
        frac >= 0.6,
        format!("DR no worse in {no_worse}/{trials} trials (strictly better in {better}); radius picks {chosen:?} over {grid:?}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("1", "SAA limit", criterion_1, true),
        ("2", "constraint closed form", criterion_2, true),
        ("3", "CG vs direct", criterion_3, true),
        ("3 desk check", "two-product table values", desk_check_3, false),
        ("4", "CG iteration counts", criterion_4, true),
        ("5", "worst-case certification", criterion_5, true),
        ("6", "OT oracle", criterion_6, true),
        ("7", "conic solver", criterion_7, true),
        ("8", "supergradient", criterion_8, true),
        ("9", "monotonicity", criterion_9, true),
        ("10", "out-of-sample portfolio", criterion_10, true),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut gating_failures = 0;
    for (id, name, run, gating) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id.split(' ').next().unwrap()) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        let note = if gating { "" } else { " (informational)" };
        println!(
            "criterion {id} [{name}]: {verdict}{note} {detail} [{:.1} s]",
            start.elapsed().as_secs_f64()
        );
        if gating && !pass {
            gating_failures += 1;
        }
    }
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
