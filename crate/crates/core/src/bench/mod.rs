//! Benchmark instances, sample generators and out-of-sample evaluation.

mod experiment;

pub use experiment::{
    run_experiment, solve_dr, tune_epsilon, Aggregate, ConstraintMethod, DrOutcome, Experiment, ExperimentConfig,
    CustomSpec, ExperimentRecord, ExperimentReport, GaussianSpec, PortfolioSpec, ReturnEstimator, TunedRecord,
};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::problem::{
    solve_recourse, AffineUncertainty, Polytope, RecourseEquality, SampleSet, TwoStageProblem, UncertaintySite,
};

/// Two-stage portfolio: invest `x` on the simplex, then rebalance with
/// proportional transaction cost `θ` and collect random returns `ξ`.
///
/// The recourse vector is `(y, Δᵇ, Δˢ)` with `Diag(e + c) x + (1-θ) Δᵇ -
/// (1+θ) Δˢ = y` and the self-financing row `eᵀΔᵇ = eᵀΔˢ`; the recourse
/// cost is `-(e + ξ)ᵀ y`.
pub fn build_portfolio(theta: f64, first_stage_return: &DVector<f64>) -> Result<TwoStageProblem> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::Input(format!("transaction cost must be nonnegative, got {theta}")));
    }
    if first_stage_return.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("first-stage returns must be finite".into()));
    }
    let n = first_stage_return.len();
    if n == 0 {
        return dim_err("at least one asset is required");
    }
    let growth = first_stage_return.add_scalar(1.0);
    let ny = 3 * n;
    let mut w = DMatrix::zeros(n + 1, ny);
    let mut t = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        t[(i, i)] = growth[i];
        w[(i, i)] = -1.0;
        w[(i, n + i)] = 1.0 - theta;
        w[(i, 2 * n + i)] = -(1.0 + theta);
        w[(n, n + i)] = 1.0;
        w[(n, 2 * n + i)] = -1.0;
    }
    let mut z0 = DVector::zeros(ny);
    let mut z = DMatrix::zeros(n, ny);
    for i in 0..n {
        z0[i] = -1.0;
        z[(i, i)] = -1.0;
    }
    let u = AffineUncertainty::objective_only(z0, z, DMatrix::zeros(0, n), DVector::zeros(0))?;
    TwoStageProblem::new(
        -growth,
        Polytope::nonnegative(n).with_equality(&vec![1.0; n], 1.0),
        DMatrix::zeros(0, ny),
        Some(RecourseEquality {
            t,
            w,
            h: DVector::zeros(n + 1),
        }),
        u,
        UncertaintySite::Objective,
    )
}

/// Coefficients of a material order instance: order `x` of `n` materials
/// under capacity `eᵀx <= u`, produce `A(ξ) x` of `m` products, pay `d`
/// per unit of unmet demand `b(ξ)`.
///
/// `ξ` has `min(m, n) + m` entries: the first perturb the diagonal yields
/// `A_ii`, the rest the demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialOrder {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub u: f64,
    /// Row-major `m × n` nominal yields.
    pub a0: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
}

impl MaterialOrder {
    /// Crude oil order for gasoline and fuel oil.
    pub fn two_dim() -> Self {
        Self {
            c: vec![2.0, 3.0],
            d: vec![7.0, 12.0],
            u: 100.0,
            a0: vec![vec![2.0, 3.0], vec![6.0, 3.4]],
            b0: vec![180.0, 162.0],
        }
    }

    /// Default sampling variances for [`MaterialOrder::two_dim`].
    pub fn two_dim_variance() -> Vec<f64> {
        vec![9.0, 12.0, 0.21, 0.16]
    }

    /// Twenty materials and products with capacity 1000.
    ///
    /// Every material mainly yields its own product and a little of the
    /// next one. Materials whose penalty saved per unit does not cover
    /// their price are never worth ordering, so their products are always
    /// short.
    pub fn high_dim() -> Self {
        let c = vec![
            2.0, 3.0, 1.0, 4.0, 5.0, 2.0, 4.0, 3.0, 4.0, 2.0, 5.0, 4.0, 4.0, 2.0, 6.0, 2.0, 4.0, 3.0, 1.0, 2.0,
        ];
        let d = vec![
            7.0, 9.0, 4.0, 6.0, 8.0, 5.0, 6.0, 8.0, 10.0, 7.0, 12.0, 10.0, 6.0, 7.0, 9.0, 5.0, 11.0, 10.0, 5.0, 8.0,
        ];
        let m = c.len();
        let mut a0 = vec![vec![0.0; m]; m];
        for i in 0..m {
            a0[i][i] = HIGH_DIM_YIELD[i];
            a0[(i + 1) % m][i] = 0.1 * HIGH_DIM_YIELD[i];
        }
        let b0 = (0..m).map(|i| 60.0 + 5.0 * (i % 4) as f64).collect();
        Self { c, d, u: 1000.0, a0, b0 }
    }

    /// Default sampling variances for [`MaterialOrder::high_dim`].
    pub fn high_dim_variance() -> Vec<f64> {
        let m = 20;
        let mut v = vec![0.0; 2 * m];
        for i in 0..m {
            v[i] = (0.15 * HIGH_DIM_YIELD[i]).powi(2);
            v[m + i] = 4.0;
        }
        v
    }

    pub fn dim_xi(&self) -> usize {
        self.c.len().min(self.d.len()) + self.d.len()
    }
}

// every third material is productive, the others are low-yield
const HIGH_DIM_YIELD: [f64; 20] = [
    1.0, 0.2, 0.2, 1.0, 0.2, 0.2, 1.0, 0.2, 0.2, 1.0, 0.2, 0.2, 1.0, 0.2, 0.2, 1.0, 0.2, 0.2, 1.0, 0.2,
];

pub fn build_material_order(spec: &MaterialOrder) -> Result<TwoStageProblem> {
    let n = spec.c.len();
    let m = spec.d.len();
    if spec.a0.len() != m || spec.a0.iter().any(|r| r.len() != n) || spec.b0.len() != m {
        return dim_err("yield matrix must be products × materials and demands one per product");
    }
    let a0 = DMatrix::from_fn(m, n, |i, j| spec.a0[i][j]);
    let diag = m.min(n);
    let mut a_terms = Vec::with_capacity(diag + m);
    let mut b_terms = Vec::with_capacity(diag + m);
    for i in 0..diag {
        let mut a = DMatrix::zeros(m, n);
        a[(i, i)] = 1.0;
        a_terms.push(a);
        b_terms.push(DVector::zeros(m));
    }
    for i in 0..m {
        a_terms.push(DMatrix::zeros(m, n));
        let mut b = DVector::zeros(m);
        b[i] = 1.0;
        b_terms.push(b);
    }
    let u = AffineUncertainty::constraints_only(
        DVector::from_vec(spec.d.clone()),
        a0,
        a_terms,
        DVector::from_vec(spec.b0.clone()),
        b_terms,
    )?;
    TwoStageProblem::new(
        DVector::from_vec(spec.c.clone()),
        Polytope::nonnegative(n).with_inequality(&vec![1.0; n], spec.u),
        DMatrix::identity(m, m),
        None,
        u,
        UncertaintySite::Constraints,
    )
}

/// Independent Gaussian draws with the given means and variances.
pub fn generate_gaussian_samples(mean: &[f64], variance: &[f64], n: usize, seed: u64) -> Result<SampleSet> {
    if mean.len() != variance.len() {
        return dim_err("mean and variance lengths differ");
    }
    if variance.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::Input("variances must be nonnegative".into()));
    }
    if n == 0 {
        return Err(Error::Input("at least one sample is required".into()));
    }
    let sd: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            DVector::from_iterator(
                mean.len(),
                mean.iter().zip(&sd).map(|(mu, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + s * z
                }),
            )
        })
        .collect();
    SampleSet::new(samples)
}

/// Correlated Gaussian returns `μ + L z` with `L Lᵀ = Σ`.
pub fn generate_returns(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<SampleSet> {
    let k = mean.len();
    if cov.shape() != (k, k) {
        return dim_err("covariance must be square with one row per asset");
    }
    if n == 0 {
        return Err(Error::Input("at least one sample is required".into()));
    }
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Input("covariance is not positive definite".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            mean + &l * z
        })
        .collect();
    SampleSet::new(samples)
}

/// A small synthetic market: four correlated index-like assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMarket {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl Default for SyntheticMarket {
    fn default() -> Self {
        let sd = [0.040, 0.055, 0.045, 0.030];
        let corr = [
            [1.0, 0.8, 0.9, 0.5],
            [0.8, 1.0, 0.85, 0.4],
            [0.9, 0.85, 1.0, 0.5],
            [0.5, 0.4, 0.5, 1.0],
        ];
        Self {
            mean: vec![0.008, 0.009, 0.0085, 0.007],
            cov: (0..4).map(|i| (0..4).map(|j| corr[i][j] * sd[i] * sd[j]).collect()).collect(),
        }
    }
}

impl SyntheticMarket {
    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.mean.clone())
    }

    pub fn cov_matrix(&self) -> Result<DMatrix<f64>> {
        let k = self.mean.len();
        if self.cov.len() != k || self.cov.iter().any(|r| r.len() != k) {
            return dim_err("covariance must be square with one row per asset");
        }
        Ok(DMatrix::from_fn(k, k, |i, j| self.cov[i][j]))
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        generate_returns(&self.mean_vector(), &self.cov_matrix()?, n, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutOfSample {
    /// `cᵀx + mean Q(x, ξ)` over the samples with a feasible recourse.
    pub value: f64,
    pub evaluated: usize,
    /// Test samples without a feasible recourse.
    pub excluded: usize,
}

pub fn out_of_sample(problem: &TwoStageProblem, x: &DVector<f64>, test: &SampleSet) -> Result<OutOfSample> {
    test.check_dim(problem.dim_xi())?;
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for xi in test.iter() {
        match solve_recourse(problem, x, xi) {
            Ok(r) => {
                total += r.value;
                evaluated += 1;
            }
            Err(Error::RecourseInfeasible(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(Error::RecourseInfeasible("no test sample admits a feasible recourse".into()));
    }
    Ok(OutOfSample {
        value: problem.c.dot(x) + total / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// `(dr / saa - 1) · 100`
pub fn percentage_difference(dr: f64, saa: f64) -> f64 {
    (dr / saa - 1.0) * 100.0
}
