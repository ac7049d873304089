//! Reparametrized least favorable submodels for stratified and biased
//! sampling designs.
//!
//! The nuisance density is profiled out as
//!
//! ```text
//! ĝ_{θ,q}(x) = f*(x) / Σ_s w_s Q_{s|X}(x; θ) / q_s
//! p*_s(y, x; θ, q) = f(y | x; θ) 1{(y, x) ∈ S_s} ĝ_{θ,q}(x) / q_s
//! ```
//!
//! with `q = (q_1, …, q_{S-1}, 1)`. `f*` is replaced by the weighted pooled
//! empirical covariate distribution, under which
//! `Σ_s w_s Σ_x Σ_y p*_s = 1` holds exactly for every `(θ, q)`.
//!
//! As a [`LogDensityModel`] the parameter vector is `(θ, log q_1, …, log q_{S-1})`;
//! `θ` is the interest block and the log-q coordinates are the nuisance block.

use nalgebra::{DMatrix, DVector};

use crate::data::{MultisampleDataset, Observation, Support, Weights};
use crate::error::{Error, Result};
use crate::model::{LogDensityEval, LogDensityModel, Order, ParamLayout};

/// A scalar function of `θ` with its gradient and Hessian.
#[derive(Debug, Clone)]
pub struct ScalarDerivs {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// A conditional model `f(y | x; θ)` together with the per-stratum selection
/// weights `Q_{s|X}(x; θ)`. Strata are 1-based.
///
/// For stratified sampling `Q_{s|X}(x; θ) = ∫ f(y|x;θ) 1{(y,x) ∈ S_s} dy`;
/// other biased-sampling designs may supply any nonnegative weight function.
pub trait StratifiedDesign: Send + Sync {
    fn n_strata(&self) -> usize;

    fn theta_labels(&self) -> Vec<String>;

    fn theta_dim(&self) -> usize {
        self.theta_labels().len()
    }

    /// Whether the strata partition the outcome space, i.e. `Σ_s Q_{s|X} = 1`.
    fn is_partition(&self) -> bool;

    /// `log f(y | x; θ)`.
    fn log_conditional(&self, y: f64, x: &[f64], theta: &DVector<f64>) -> ScalarDerivs;

    /// `Q_{s|X}(x; θ)`.
    fn stratum_weight(&self, s: usize, x: &[f64], theta: &DVector<f64>) -> ScalarDerivs;

    /// The discrete response cells that make up stratum `s`.
    fn stratum_responses(&self, s: usize) -> Vec<f64>;

    fn in_stratum(&self, s: usize, y: f64) -> bool {
        self.stratum_responses(s).contains(&y)
    }

    /// Response used for an observation; designs where the stratum determines
    /// the response may fill it in.
    fn response_of(&self, obs: &Observation) -> Option<f64> {
        obs.response
    }
}

/// Plug-in estimate of `f*` on the observed support.
#[derive(Debug, Clone)]
pub struct FStarEstimate {
    pub support: Support,
    pub values: Vec<f64>,
}

impl FStarEstimate {
    pub fn at(&self, x: &[f64]) -> f64 {
        self.support.position(x).map_or(0.0, |k| self.values[k])
    }
}

/// `f̂*(v_k) = Σ_s w_s · (relative frequency of v_k within sample s)`.
pub fn fstar_empirical(dataset: &MultisampleDataset, weights: &Weights) -> Result<FStarEstimate> {
    if weights.len() != dataset.n_samples() {
        return Err(Error::Dimension(format!(
            "{} weights for {} samples",
            weights.len(),
            dataset.n_samples()
        )));
    }
    let mut values = vec![0.0; dataset.support().len()];
    for s in 1..=dataset.n_samples() {
        let ns = dataset.sample_sizes()[s - 1] as f64;
        for (k, c) in dataset.sample_counts(s).into_iter().enumerate() {
            values[k] += weights.get(s) * c as f64 / ns;
        }
    }
    Ok(FStarEstimate {
        support: dataset.support().clone(),
        values,
    })
}

/// `q = (q_1, …, q_{S-1}, 1)` with every component positive.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector(Vec<f64>);

impl QVector {
    pub fn from_free(free: &[f64]) -> Result<Self> {
        if free.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("q components must be positive, got {free:?}")));
        }
        let mut q = free.to_vec();
        q.push(1.0);
        Ok(Self(q))
    }

    pub fn from_log_free(log_free: &[f64]) -> Self {
        let mut q: Vec<f64> = log_free.iter().map(|v| v.exp()).collect();
        q.push(1.0);
        Self(q)
    }

    pub fn ones(n_strata: usize) -> Self {
        Self(vec![1.0; n_strata])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn free(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    /// `q_s` for 1-based `s`.
    pub fn get(&self, s: usize) -> f64 {
        self.0[s - 1]
    }
}

/// Whether the constant `log f̂*(x)` is part of the log-density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    /// Drops `log f̂*(x)`; scores and Hessians are unchanged.
    Estimation,
    Full,
}

/// Settings for the `q_s = Σ_k Q_{s|X}(v_k) ĝ(v_k)` fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 1.0,
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub q: QVector,
    pub iterations: usize,
}

/// Selection mass `D = Σ_s w_s Q_{s|X}/q_s` with derivatives in `(θ, log q_free)`.
struct Mass {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// The reparametrized model `p*_s(y, x; θ, q)` for a stratified design.
pub struct ReparamModel<D> {
    design: D,
    fstar: FStarEstimate,
    weights: Weights,
    mode: DensityMode,
    layout: ParamLayout,
    name: String,
}

impl<D: StratifiedDesign> ReparamModel<D> {
    pub fn new(design: D, fstar: FStarEstimate, weights: Weights, mode: DensityMode) -> Result<Self> {
        let s = design.n_strata();
        if weights.len() != s {
            return Err(Error::StrataCount {
                expected: s,
                got: weights.len(),
            });
        }
        let d = design.theta_dim();
        let mut labels = design.theta_labels();
        labels.extend((1..s).map(|j| format!("log_q{j}")));
        let layout = ParamLayout::new(labels, (0..d).collect(), (d..d + s - 1).collect());
        Ok(Self {
            design,
            fstar,
            weights,
            mode,
            layout,
            name: "reparam".into(),
        })
    }

    /// Builds the model with the empirical `f̂*` of `dataset`.
    pub fn from_dataset(design: D, dataset: &MultisampleDataset, weights: Weights, mode: DensityMode) -> Result<Self> {
        let fstar = fstar_empirical(dataset, &weights)?;
        Self::new(design, fstar, weights, mode)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_mode(mut self, mode: DensityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_fstar(mut self, fstar: FStarEstimate) -> Self {
        self.fstar = fstar;
        self
    }

    pub fn design(&self) -> &D {
        &self.design
    }

    pub fn fstar(&self) -> &FStarEstimate {
        &self.fstar
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn n_strata(&self) -> usize {
        self.design.n_strata()
    }

    pub fn theta_dim(&self) -> usize {
        self.design.theta_dim()
    }

    /// Splits a model parameter vector into `θ` and `q`.
    pub fn split(&self, params: &DVector<f64>) -> (DVector<f64>, QVector) {
        let d = self.theta_dim();
        let theta = params.rows(0, d).into_owned();
        let q = QVector::from_log_free(&params.as_slice()[d..]);
        (theta, q)
    }

    /// Joins `θ` and `q` into a model parameter vector.
    pub fn join(&self, theta: &DVector<f64>, q: &QVector) -> DVector<f64> {
        let mut v: Vec<f64> = theta.iter().copied().collect();
        v.extend(q.free().iter().map(|x| x.ln()));
        DVector::from_vec(v)
    }

    fn mass(&self, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<Mass> {
        let s_count = self.n_strata();
        let d = self.theta_dim();
        let p = d + s_count - 1;
        let mut value = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for s in 1..=s_count {
            let qs = self.design.stratum_weight(s, x, theta);
            let c = self.weights.get(s) / q.get(s);
            value += c * qs.value;
            grad.rows_mut(0, d).axpy(c, &qs.grad, 1.0);
            hess.view_mut((0, 0), (d, d)).zip_apply(&qs.hess, |a, b| *a += c * b);
            if s < s_count {
                let j = d + s - 1;
                // d/du_j (w_j Q_j e^{-u_j}) = -w_j Q_j / q_j
                grad[j] = -c * qs.value;
                hess[(j, j)] = c * qs.value;
                for a in 0..d {
                    hess[(a, j)] = -c * qs.grad[a];
                    hess[(j, a)] = -c * qs.grad[a];
                }
            }
        }
        if !(value > 0.0) {
            return Err(Error::ZeroSelectionMass(x.to_vec()));
        }
        Ok(Mass { value, grad, hess })
    }

    /// `Σ_s w_s Q_{s|X}(x; θ) / q_s`.
    pub fn selection_mass(&self, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<f64> {
        Ok(self.mass(x, theta, q)?.value)
    }

    /// `ĝ_{θ,q}(x) = f̂*(x) / Σ_s w_s Q_{s|X}(x; θ) / q_s`.
    pub fn g_hat(&self, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<f64> {
        Ok(self.fstar.at(x) / self.selection_mass(x, theta, q)?)
    }

    fn check_stratum(&self, s: usize, y: f64, x: &[f64], theta: &DVector<f64>) -> Result<()> {
        if s == 0 || s > self.n_strata() || !self.design.in_stratum(s, y) || !(self.design.stratum_weight(s, x, theta).value > 0.0) {
            return Err(Error::InconsistentStratum {
                sample: s,
                covariates: x.to_vec(),
            });
        }
        Ok(())
    }

    /// `log p*_s(y, x; θ, q)` with the given density mode.
    pub fn log_density_star(&self, s: usize, y: f64, x: &[f64], theta: &DVector<f64>, q: &QVector, mode: DensityMode) -> Result<f64> {
        self.check_stratum(s, y, x, theta)?;
        let lf = self.design.log_conditional(y, x, theta).value;
        let mass = self.selection_mass(x, theta, q)?;
        let mut v = lf - mass.ln() - q.get(s).ln();
        if mode == DensityMode::Full {
            v += self.fstar.at(x).ln();
        }
        Ok(v)
    }

    /// `ℓ̇₁`: gradient of `log p*_s` in `θ`.
    pub fn score_theta(&self, s: usize, y: f64, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<DVector<f64>> {
        self.check_stratum(s, y, x, theta)?;
        let lf = self.design.log_conditional(y, x, theta);
        let m = self.mass(x, theta, q)?;
        let d = self.theta_dim();
        Ok(lf.grad - m.grad.rows(0, d) / m.value)
    }

    /// `ℓ̇₂ⱼ = (w_j / q_j²) {Q_{j|X}(x; θ) / Σ_s w_s Q_{s|X}(x; θ)/q_s − q_j}`, `j = 1..S-1`.
    ///
    /// The `−w_j/q_j` term is the sample-weighted average of the derivative of
    /// `−log q_s`, so this differs from [`Self::score_q_exact`] by
    /// `(δ_{sj} − w_j)/q_j`, which is constant within each sample. The two agree
    /// after centering, and their dataset sums agree when `w_s = n_s/n`.
    pub fn score_q(&self, s: usize, y: f64, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<DVector<f64>> {
        self.check_stratum(s, y, x, theta)?;
        let mass = self.selection_mass(x, theta, q)?;
        Ok(DVector::from_iterator(
            self.n_strata() - 1,
            (1..self.n_strata()).map(|j| {
                let qj = q.get(j);
                let qjx = self.design.stratum_weight(j, x, theta).value;
                self.weights.get(j) / (qj * qj) * (qjx / mass - qj)
            }),
        ))
    }

    /// Gradient of `log p*_s(y, x; θ, q)` in `(q_1, …, q_{S-1})`.
    pub fn score_q_exact(&self, s: usize, y: f64, x: &[f64], theta: &DVector<f64>, q: &QVector) -> Result<DVector<f64>> {
        self.check_stratum(s, y, x, theta)?;
        let mass = self.selection_mass(x, theta, q)?;
        Ok(DVector::from_iterator(
            self.n_strata() - 1,
            (1..self.n_strata()).map(|j| {
                let qj = q.get(j);
                let qjx = self.design.stratum_weight(j, x, theta).value;
                let own = if s == j { 1.0 / qj } else { 0.0 };
                self.weights.get(j) * qjx / (qj * qj * mass) - own
            }),
        ))
    }

    /// `Σ_s w_s Σ_k Σ_{y ∈ S_s} p*_s(y, v_k; θ, q)` in full mode.
    pub fn check_normalization(&self, theta: &DVector<f64>, q: &QVector) -> Result<f64> {
        let mut total = 0.0;
        for (k, x) in self.fstar.support.points().iter().enumerate() {
            let fk = self.fstar.values[k];
            if fk == 0.0 {
                continue;
            }
            let g = fk / self.selection_mass(x, theta, q)?;
            for s in 1..=self.n_strata() {
                let mut cell = 0.0;
                for y in self.design.stratum_responses(s) {
                    cell += self.design.log_conditional(y, x, theta).value.exp();
                }
                total += self.weights.get(s) * cell * g / q.get(s);
            }
        }
        Ok(total)
    }

    /// Largest `|Σ_s Q_{s|X}(v_k; θ) − 1|` over the support; zero for exact partitions.
    pub fn partition_defect(&self, theta: &DVector<f64>) -> f64 {
        self.fstar
            .support
            .points()
            .iter()
            .map(|x| {
                let sum: f64 = (1..=self.n_strata()).map(|s| self.design.stratum_weight(s, x, theta).value).sum();
                (sum - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `Σ_k ĝ_{θ,q}(v_k) · Σ_s w_s Q_{s|X}(v_k)/q_s`, which equals `Σ_k f̂*(v_k) = 1`.
    pub fn g_hat_mass(&self, theta: &DVector<f64>, q: &QVector) -> Result<f64> {
        let mut total = 0.0;
        for x in self.fstar.support.points() {
            total += self.g_hat(x, theta, q)? * self.selection_mass(x, theta, q)?;
        }
        Ok(total)
    }

    /// `Σ_k Q_{j|X}(v_k; θ) ĝ_{θ,q}(v_k)` for every stratum `j`.
    pub fn expected_selection(&self, theta: &DVector<f64>, q: &QVector) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_strata()];
        for x in self.fstar.support.points() {
            let g = self.g_hat(x, theta, q)?;
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.design.stratum_weight(j + 1, x, theta).value * g;
            }
        }
        Ok(out)
    }

    /// Solves `q_s = Σ_k Q_{s|X}(v_k; θ) ĝ_{θ,q}(v_k)`, renormalized so `q_S = 1`.
    pub fn fixed_point_q(&self, theta: &DVector<f64>, cfg: &FixedPointConfig) -> Result<FixedPoint> {
        let mut q = QVector::ones(self.n_strata());
        for it in 1..=cfg.max_iter {
            let t = self.expected_selection(theta, &q)?;
            let last = t[t.len() - 1];
            let target: Vec<f64> = t[..t.len() - 1].iter().map(|v| v / last).collect();
            let next: Vec<f64> = q
                .free()
                .iter()
                .zip(&target)
                .map(|(old, new)| old + cfg.damping * (new - old))
                .collect();
            let delta = next
                .iter()
                .zip(q.free())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            q = QVector::from_free(&next)?;
            if delta < cfg.tol {
                return Ok(FixedPoint { q, iterations: it });
            }
        }
        Err(Error::FixedPointDiverged(cfg.max_iter))
    }
}

impl<D: StratifiedDesign> LogDensityModel for ReparamModel<D> {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let s = obs.sample;
        let y = self.design.response_of(obs).ok_or_else(|| Error::InvalidObservation {
            index: 0,
            reason: "response required by this design".into(),
        })?;
        let x = obs.covariates.as_slice();
        let (theta, q) = self.split(params);
        self.check_stratum(s, y, x, &theta)?;

        let lf = self.design.log_conditional(y, x, &theta);
        let m = self.mass(x, &theta, &q)?;
        let d = self.theta_dim();
        let p = self.dim();

        let mut value = lf.value - m.value.ln() - q.get(s).ln();
        if self.mode == DensityMode::Full {
            value += self.fstar.at(x).ln();
        }

        let gradient = (order >= Order::Gradient).then(|| {
            let mut g = -&m.grad / m.value;
            g.rows_mut(0, d).axpy(1.0, &lf.grad, 1.0);
            if s < self.n_strata() {
                g[d + s - 1] -= 1.0;
            }
            g
        });
        let hessian = (order >= Order::Hessian).then(|| {
            let mut h = -(&m.hess / m.value) + (&m.grad * m.grad.transpose()) / (m.value * m.value);
            h.view_mut((0, 0), (d, d)).zip_apply(&lf.hess, |a, b| *a += b);
            debug_assert_eq!(h.nrows(), p);
            h
        });
        Ok(LogDensityEval {
            value,
            gradient,
            hessian,
        })
    }
}
