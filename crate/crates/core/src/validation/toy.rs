//! Enumerable case-control populations and exact information blocks.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::casecontrol::{sigmoid, CASE, CONTROL};
use crate::data::{MultisampleDataset, Observation};
use crate::error::{Error, Result};
use crate::inference::{InfoBlocks, InfoSource};
use crate::linalg::select_block;
use crate::model::{symmetrize, LogDensityModel, Order};

/// Largest number of `(sample, support point)` outcomes enumerated.
pub const MAX_OUTCOMES: usize = 10_000;

/// A logistic population `f(y | x; α, β) g₀(x)` on a finite support, sampled
/// by case-control design with weights `(w_control, w_case)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    pub support: Vec<Vec<f64>>,
    pub g0: Vec<f64>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ToyInstance {
    pub fn validate(&self) -> Result<()> {
        let k = self.support.len();
        if k == 0 || self.g0.len() != k || self.weights.len() != 2 {
            return Err(Error::Dimension(format!(
                "toy instance with {} support points, {} probabilities, {} weights",
                k,
                self.g0.len(),
                self.weights.len()
            )));
        }
        if self.support.iter().any(|x| x.len() != self.beta.len()) {
            return Err(Error::Dimension("support point and slope dimensions differ".into()));
        }
        for (what, v) in [("g0", &self.g0), ("weights", &self.weights)] {
            let sum: f64 = v.iter().sum();
            if v.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("{what} must be a probability vector")));
            }
        }
        Ok(())
    }

    pub fn outcome_count(&self) -> usize {
        2 * self.support.len()
    }

    /// `f(case | v_k)` for every support point.
    pub fn case_probabilities(&self) -> Vec<f64> {
        self.support
            .iter()
            .map(|x| sigmoid(self.alpha + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }

    /// `(Q_control, Q_case)`.
    pub fn stratum_probabilities(&self) -> [f64; 2] {
        let f1 = self.case_probabilities();
        let case: f64 = f1.iter().zip(&self.g0).map(|(f, g)| f * g).sum();
        let control: f64 = f1.iter().zip(&self.g0).map(|(f, g)| (1.0 - f) * g).sum();
        [control, case]
    }

    /// Covariate distribution of sample `s` (1 = control, 2 = case).
    pub fn sample_probabilities(&self, s: usize) -> Vec<f64> {
        let f1 = self.case_probabilities();
        let q = self.stratum_probabilities();
        f1.iter()
            .zip(&self.g0)
            .map(|(f, g)| if s == CASE { f * g / q[1] } else { (1.0 - f) * g / q[0] })
            .collect()
    }

    /// `q₁ = Q_control / Q_case`, the selection ratio at the truth.
    pub fn true_q(&self) -> f64 {
        let q = self.stratum_probabilities();
        q[0] / q[1]
    }

    /// `(α*, β)` with `α* = α + log(Q_control / Q_case)`.
    pub fn identifiable_truth(&self) -> DVector<f64> {
        let mut v = vec![self.alpha + self.true_q().ln()];
        v.extend(&self.beta);
        DVector::from_vec(v)
    }

    /// `(α, β)`.
    pub fn theta(&self) -> DVector<f64> {
        let mut v = vec![self.alpha];
        v.extend(&self.beta);
        DVector::from_vec(v)
    }

    /// Dataset whose cell counts are `counts[s-1][k]`.
    pub fn dataset_from_counts(&self, counts: &[Vec<u64>]) -> Result<MultisampleDataset> {
        if counts.len() != 2 || counts.iter().any(|c| c.len() != self.support.len()) {
            return Err(Error::Dimension("counts must be 2 × support size".into()));
        }
        let mut obs = Vec::new();
        for (k, x) in self.support.iter().enumerate() {
            for s in [CONTROL, CASE] {
                let c = counts[s - 1][k];
                if c > 0 {
                    obs.push(Observation::new(s, Some((s - 1) as f64), x.clone(), c));
                }
            }
        }
        MultisampleDataset::new(obs, 2)
    }

    /// Draws `sizes[s-1]` units from each sample's covariate distribution.
    pub fn simulate<R: Rng + ?Sized>(&self, sizes: [u64; 2], rng: &mut R) -> Result<MultisampleDataset> {
        let mut counts = vec![vec![0u64; self.support.len()]; 2];
        for s in [CONTROL, CASE] {
            let dist = WeightedIndex::new(self.sample_probabilities(s))
                .map_err(|e| Error::Config(format!("sample {s} distribution: {e}")))?;
            for _ in 0..sizes[s - 1] {
                counts[s - 1][dist.sample(rng)] += 1;
            }
        }
        self.dataset_from_counts(&counts)
    }
}

/// Population information blocks by exact enumeration, and `I*`.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub blocks: InfoBlocks,
    pub istar: DMatrix<f64>,
}

/// `Σ_s w_s E_s(ℓ̇ᶜ ℓ̇ᶜᵀ)` with `E_s` summed over the toy's support.
///
/// `I* = I11 − I12 I22⁺ I21` uses the SVD pseudo-inverse, so a vanishing
/// nuisance block projects onto the zero space and gives `I* = I11`.
pub fn brute_force_info<M: LogDensityModel + ?Sized>(toy: &ToyInstance, model: &M, params: &DVector<f64>) -> Result<BruteForce> {
    toy.validate()?;
    if toy.outcome_count() > MAX_OUTCOMES {
        return Err(Error::EnumerationTooLarge(toy.outcome_count()));
    }
    let dim = model.dim();
    let mut sigma = DMatrix::zeros(dim, dim);
    for s in [CONTROL, CASE] {
        let probs = toy.sample_probabilities(s);
        let scores = toy
            .support
            .iter()
            .map(|x| {
                let obs = Observation::new(s, Some((s - 1) as f64), x.clone(), 1);
                Ok(model.evaluate(&obs, params, Order::Gradient)?.gradient.expect("gradient"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = scores
            .iter()
            .zip(&probs)
            .fold(DVector::zeros(dim), |acc, (g, p)| acc + g * *p);
        for (g, p) in scores.iter().zip(&probs) {
            let c = g - &mean;
            sigma += &c * c.transpose() * (toy.weights[s - 1] * p);
        }
    }
    symmetrize(&mut sigma);
    let layout = model.layout();
    let i11 = select_block(&sigma, &layout.interest, &layout.interest);
    let i12 = select_block(&sigma, &layout.interest, &layout.nuisance);
    let i22 = select_block(&sigma, &layout.nuisance, &layout.nuisance);
    let eps = 1e-14 * i22.amax();
    let pinv = i22
        .clone()
        .pseudo_inverse(eps)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut istar = &i11 - &i12 * pinv * i12.transpose();
    symmetrize(&mut istar);
    Ok(BruteForce {
        blocks: InfoBlocks::new(i11, i12, i22, 1.0, InfoSource::CenteredMoments)?,
        istar,
    })
}

/// Exact blocks recorded in a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedBlocks {
    pub i11: Vec<Vec<f64>>,
    pub i12: Vec<Vec<f64>>,
    pub i22: Vec<Vec<f64>>,
    pub istar: Vec<Vec<f64>>,
}

/// Toy instance with rational-arithmetic reference blocks at the truth of the
/// identifiable model, plus integer counts whose empirical distribution
/// equals the population one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFixture {
    pub name: String,
    pub instance: ToyInstance,
    pub params: Vec<f64>,
    pub interest: Vec<usize>,
    pub nuisance: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
    pub expected: ExpectedBlocks,
    pub q0: f64,
}

const FIXTURES: [&str; 3] = [
    include_str!("../../fixtures/toy_binary_slope_log2.json"),
    include_str!("../../fixtures/toy_two_covariates.json"),
    include_str!("../../fixtures/toy_binary_slope0.json"),
];

pub fn toy_fixtures() -> Vec<ToyFixture> {
    FIXTURES
        .iter()
        .map(|s| serde_json::from_str(s).expect("bundled fixture is valid"))
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}
