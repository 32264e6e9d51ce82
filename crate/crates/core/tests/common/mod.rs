#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wdr_core::problem::{AffineUncertainty, Polytope, SampleSet, TwoStageProblem, UncertaintySite};

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_samples(rng: &mut ChaCha8Rng, count: usize, m: usize) -> SampleSet {
    SampleSet::new((0..count).map(|_| uniform_vector(rng, m, -1.0, 1.0)).collect()).unwrap()
}

/// Random order-like problem with uncertain constraints: `n` materials,
/// `k` products, `m` uncertain parameters, recourse `[I | R]` with `R >= 0`.
pub fn constraint_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> TwoStageProblem {
    let extra = uniform_matrix(rng, k, 1, 0.0, 1.0);
    let recourse = DMatrix::from_fn(k, k + 1, |r, c| if c < k { (r == c) as u8 as f64 } else { extra[(r, 0)] });
    let mut z = uniform_vector(rng, k + 1, 1.0, 5.0);
    z[k] = 2.0 * z.rows(0, k).max();
    let a_terms = (0..m).map(|_| uniform_matrix(rng, k, n, -0.3, 0.3)).collect();
    let b_terms = (0..m).map(|_| uniform_vector(rng, k, -1.0, 1.0)).collect();
    let u = AffineUncertainty::constraints_only(
        z,
        uniform_matrix(rng, k, n, 0.5, 2.0),
        a_terms,
        uniform_vector(rng, k, 5.0, 15.0),
        b_terms,
    )
    .unwrap();
    TwoStageProblem::new(
        uniform_vector(rng, n, 0.5, 2.0),
        Polytope::nonnegative(n).with_inequality(&vec![1.0; n], 10.0),
        recourse,
        None,
        u,
        UncertaintySite::Constraints,
    )
    .unwrap()
}

/// Random covering problem with uncertain recourse costs: `k` demand rows
/// served by first-stage `x` and `n_y = k + 1` positive recourse columns.
pub fn objective_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> TwoStageProblem {
    let ny = k + 1;
    let u = AffineUncertainty::objective_only(
        uniform_vector(rng, ny, 3.0, 5.0),
        uniform_matrix(rng, m, ny, -0.5, 0.5),
        uniform_matrix(rng, k, n, 0.2, 1.0),
        uniform_vector(rng, k, 1.0, 5.0),
    )
    .unwrap();
    TwoStageProblem::new(
        uniform_vector(rng, n, 0.5, 2.0),
        Polytope::nonnegative(n).with_inequality(&vec![1.0; n], 3.0),
        uniform_matrix(rng, k, ny, 0.2, 1.0),
        None,
        u,
        UncertaintySite::Objective,
    )
    .unwrap()
}

/// A feasible point of `{x >= 0, eᵀx <= cap}`.
pub fn random_first_stage(rng: &mut ChaCha8Rng, n: usize, cap: f64) -> DVector<f64> {
    let x = uniform_vector(rng, n, 0.0, 1.0);
    let s = x.sum();
    x * (rng.random_range(0.0..cap) / s.max(1e-12))
}
