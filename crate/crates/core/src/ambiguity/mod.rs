//! Wasserstein balls around empirical distributions.

mod ot;

pub use ot::{assignment, cost_matrix, ot_distance, Transport};

use std::cmp::Ordering;
use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::norm::Norm;
use crate::problem::SampleSet;

/// Weights must sum to one within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Membership tolerance for the perturbation budget.
pub const BUDGET_TOL: f64 = 1e-9;

/// 1-Wasserstein ball of radius `radius` with the given ground norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WassersteinBall {
    radius: f64,
    pub norm: Norm,
}

impl WassersteinBall {
    pub fn new(radius: f64, norm: Norm) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Input(format!("Wasserstein radius must be positive, got {radius}")));
        }
        Ok(Self { radius, norm })
    }

    /// The degenerate ball `{F_N}`; robust problems over it reduce to the
    /// sample average approximation.
    pub fn sample_average(norm: Norm) -> Self {
        Self { radius: 0.0, norm }
    }

    /// Accepts `radius = 0` as [`WassersteinBall::sample_average`].
    pub fn with_radius(radius: f64, norm: Norm) -> Result<Self> {
        if radius == 0.0 {
            Ok(Self::sample_average(norm))
        } else {
            Self::new(radius, norm)
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn is_degenerate(&self) -> bool {
        self.radius == 0.0
    }
}

/// Finitely supported probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub struct DiscreteDistribution {
    atoms: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<DistributionRepr> for DiscreteDistribution {
    type Error = Error;

    fn try_from(r: DistributionRepr) -> Result<Self> {
        Self::new(r.atoms.into_iter().map(DVector::from_vec).collect(), r.weights)
    }
}

impl From<DiscreteDistribution> for DistributionRepr {
    fn from(d: DiscreteDistribution) -> Self {
        Self {
            atoms: d.atoms.iter().map(|a| a.iter().copied().collect()).collect(),
            weights: d.weights,
        }
    }
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Input("need one weight per atom and at least one atom".into()));
        }
        let m = atoms[0].len();
        if atoms.iter().any(|a| a.len() != m) {
            return dim_err("atoms have different dimensions");
        }
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Input("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Input(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    /// The empirical distribution `F_N` of a sample set.
    pub fn empirical(samples: &SampleSet) -> Self {
        let n = samples.len();
        Self {
            atoms: samples.samples().to_vec(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|v| (v - w).abs() <= 1e-15)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.atoms
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.dim()), |acc, (a, w)| acc + a * *w)
    }

    /// `E[f(ξ)]`
    pub fn expect(&self, mut f: impl FnMut(&DVector<f64>) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            if *w > 0.0 {
                total += w * f(a)?;
            }
        }
        Ok(total)
    }

    /// A fixed total order, used to make pairwise computations symmetric.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| {
            let flat = |d: &Self| -> Vec<f64> {
                d.weights
                    .iter()
                    .copied()
                    .chain(d.atoms.iter().flat_map(|a| a.iter().copied()))
                    .collect()
            };
            flat(self)
                .iter()
                .zip(flat(other).iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    }

    /// Reads rows `weight, atom_1, ..., atom_m`. A non-numeric first row is a header.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let samples = crate::problem::io::read_samples_csv(reader)?;
        let mut atoms = Vec::with_capacity(samples.len());
        let mut weights = Vec::with_capacity(samples.len());
        for row in samples.into_inner() {
            if row.len() < 2 {
                return Err(Error::Input("distribution rows need a weight and at least one coordinate".into()));
            }
            weights.push(row[0]);
            atoms.push(row.rows(1, row.len() - 1).into_owned());
        }
        Self::new(atoms, weights)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("weight".to_string()).chain((0..self.dim()).map(|j| format!("xi{}", j + 1))))?;
        for (a, p) in self.atoms.iter().zip(&self.weights) {
            w.write_record(std::iter::once(format!("{p:e}")).chain(a.iter().map(|v| format!("{v:e}"))))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sample displacements `δ_i = ξ^(i) - ξ̂^i` under a total budget
/// `Σ ||δ_i||_2 <= budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedPerturbation {
    pub base: SampleSet,
    pub deltas: Vec<DVector<f64>>,
    pub budget: f64,
}

impl BudgetedPerturbation {
    pub fn new(base: SampleSet, deltas: Vec<DVector<f64>>, budget: f64) -> Result<Self> {
        if deltas.len() != base.len() {
            return dim_err("one displacement per sample is required");
        }
        if deltas.iter().any(|d| d.len() != base.dim()) {
            return dim_err("displacements must have the sample dimension");
        }
        if budget.is_nan() || budget < 0.0 {
            return Err(Error::Input("budget must be nonnegative".into()));
        }
        Ok(Self { base, deltas, budget })
    }

    pub fn zero(base: SampleSet, budget: f64) -> Result<Self> {
        let deltas = vec![DVector::zeros(base.dim()); base.len()];
        Self::new(base, deltas, budget)
    }

    pub fn used_budget(&self) -> f64 {
        self.deltas.iter().map(|d| d.norm()).sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.used_budget() <= self.budget + BUDGET_TOL
    }

    /// The perturbed points `ξ̂^i + δ_i`.
    pub fn points(&self) -> Vec<DVector<f64>> {
        self.base.iter().zip(&self.deltas).map(|(s, d)| s + d).collect()
    }

    /// Equal-weight distribution on the perturbed points.
    pub fn distribution(&self) -> DiscreteDistribution {
        let n = self.deltas.len();
        DiscreteDistribution {
            atoms: self.points(),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

/// Euclidean projection onto `{t >= 0 : Σ t_i <= radius}` for `t >= 0`.
pub(crate) fn project_capped_simplex(t: &[f64], radius: f64) -> Vec<f64> {
    let total: f64 = t.iter().sum();
    if total <= radius {
        return t.to_vec();
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - radius) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    t.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Euclidean projection of the stacked displacements onto the budget set.
pub fn project_budget(pert: &BudgetedPerturbation) -> BudgetedPerturbation {
    let norms: Vec<f64> = pert.deltas.iter().map(|d| d.norm()).collect();
    let projected = project_capped_simplex(&norms, pert.budget);
    let deltas = pert
        .deltas
        .iter()
        .zip(norms.iter().zip(&projected))
        .map(|(d, (&t, &tp))| if t > 0.0 { d * (tp / t) } else { d.clone() })
        .collect();
    BudgetedPerturbation {
        base: pert.base.clone(),
        deltas,
        budget: pert.budget,
    }
}

/// Constants of the light-tail concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusConstants {
    /// Light-tail exponent.
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Radius giving confidence `1 - beta` that the true distribution lies in
/// the ball around `N = n_samples` samples in dimension `dim`.
pub fn radius_schedule(n_samples: usize, beta: f64, dim: usize, k: RadiusConstants) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Input(format!("confidence parameter must lie in (0, 1), got {beta}")));
    }
    if !(k.c > 0.0 && k.c1 > 0.0 && k.c2 > 0.0) || !(k.c.is_finite() && k.c1.is_finite() && k.c2.is_finite()) {
        return Err(Error::Input("radius constants must be positive and finite".into()));
    }
    if n_samples == 0 {
        return Err(Error::Input("sample count must be positive".into()));
    }
    let log_term = (k.c1 / beta).ln();
    let n = n_samples as f64;
    let base = log_term / (k.c2 * n);
    let exponent = if n >= log_term / k.c2 {
        1.0 / dim.max(2) as f64
    } else {
        1.0 / k.c
    };
    Ok(base.max(0.0).powf(exponent))
}
