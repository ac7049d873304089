//! Grouped multisample data: observations indexed by sample, per-sample sizes,
//! the plug-in sample weights `w_s = n_s / n`, and the finite covariate support.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One (possibly grouped) observation. `sample` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sample: usize,
    pub response: Option<f64>,
    pub covariates: Vec<f64>,
    pub multiplicity: u64,
}

impl Observation {
    pub fn new(sample: usize, response: Option<f64>, covariates: Vec<f64>, multiplicity: u64) -> Self {
        Self {
            sample,
            response,
            covariates,
            multiplicity,
        }
    }
}

/// Bit-exact key for a covariate vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CovariateKey(Vec<u64>);

impl CovariateKey {
    pub fn of(x: &[f64]) -> Self {
        // -0.0 and 0.0 are the same support point
        CovariateKey(x.iter().map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() }).collect())
    }
}

/// Distinct covariate vectors `v_1..v_K` in order of first appearance.
#[derive(Debug, Clone)]
pub struct Support {
    points: Vec<Vec<f64>>,
    index: HashMap<CovariateKey, usize>,
}

impl Support {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(points.len());
        for (k, p) in points.iter().enumerate() {
            if index.insert(CovariateKey::of(p), k).is_some() {
                return Err(Error::Dimension(format!("duplicate support point {p:?}")));
            }
        }
        Ok(Self { points, index })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.index.get(&CovariateKey::of(x)).copied()
    }
}

/// Grouped multisample dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MultisampleDataset {
    observations: Vec<Observation>,
    sample_sizes: Vec<u64>,
    total: u64,
    dim: usize,
    support: Support,
    /// Pooled empirical frequency of each support point.
    support_frequency: Vec<f64>,
    /// Per-observation support index.
    support_of: Vec<usize>,
}

impl MultisampleDataset {
    /// Builds a dataset with `n_samples` samples. Every sample must be non-empty.
    pub fn new(observations: Vec<Observation>, n_samples: usize) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::NoObservations);
        }
        let dim = observations[0].covariates.len();
        let mut sample_sizes = vec![0u64; n_samples];
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut index: HashMap<CovariateKey, usize> = HashMap::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut support_of = Vec::with_capacity(observations.len());

        for (i, obs) in observations.iter().enumerate() {
            if obs.multiplicity == 0 {
                return Err(Error::InvalidObservation {
                    index: i,
                    reason: "multiplicity must be at least 1".into(),
                });
            }
            if obs.sample == 0 || obs.sample > n_samples {
                return Err(Error::InvalidObservation {
                    index: i,
                    reason: format!("sample {} outside 1..={n_samples}", obs.sample),
                });
            }
            if obs.covariates.len() != dim {
                return Err(Error::InvalidObservation {
                    index: i,
                    reason: format!("covariate dimension {} != {dim}", obs.covariates.len()),
                });
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservation {
                    index: i,
                    reason: "non-finite covariate".into(),
                });
            }
            sample_sizes[obs.sample - 1] += obs.multiplicity;
            let key = CovariateKey::of(&obs.covariates);
            let k = *index.entry(key).or_insert_with(|| {
                points.push(obs.covariates.clone());
                counts.push(0);
                points.len() - 1
            });
            counts[k] += obs.multiplicity;
            support_of.push(k);
        }

        if let Some(s) = sample_sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptySample(s + 1));
        }
        let total: u64 = sample_sizes.iter().sum();
        let support_frequency = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let support = Support::from_points(points)?;

        Ok(Self {
            observations,
            sample_sizes,
            total,
            dim,
            support,
            support_frequency,
            support_of,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n_samples(&self) -> usize {
        self.sample_sizes.len()
    }

    pub fn sample_sizes(&self) -> &[u64] {
        &self.sample_sizes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn covariate_dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn support_frequency(&self) -> &[f64] {
        &self.support_frequency
    }

    pub fn support_index(&self, obs: usize) -> usize {
        self.support_of[obs]
    }

    /// Count of observations in sample `s` (1-based) at each support point.
    pub fn sample_counts(&self, s: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.support.len()];
        for (i, obs) in self.observations.iter().enumerate() {
            if obs.sample == s {
                counts[self.support_of[i]] += obs.multiplicity;
            }
        }
        counts
    }

    /// The same data with every grouped row expanded into unit-multiplicity rows.
    pub fn expanded(&self) -> Self {
        let rows = self
            .observations
            .iter()
            .flat_map(|o| {
                std::iter::repeat_n(
                    Observation {
                        multiplicity: 1,
                        ..o.clone()
                    },
                    o.multiplicity as usize,
                )
            })
            .collect();
        Self::new(rows, self.n_samples()).expect("expansion of a valid dataset is valid")
    }
}

/// Sample weights `w_s`, one per sample, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("weights must be positive, got {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {total}")));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weight of sample `s` (1-based).
    pub fn get(&self, s: usize) -> f64 {
        self.0[s - 1]
    }
}

/// `w_s = n_s / n`.
pub fn compute_weights(dataset: &MultisampleDataset) -> Result<Weights> {
    if let Some(s) = dataset.sample_sizes().iter().position(|&n| n == 0) {
        return Err(Error::EmptySample(s + 1));
    }
    let n = dataset.total() as f64;
    Ok(Weights(
        dataset.sample_sizes().iter().map(|&ns| ns as f64 / n).collect(),
    ))
}
