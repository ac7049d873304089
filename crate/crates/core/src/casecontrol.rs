//! Case-control (two-stratum) logistic regression.
//!
//! Sample 1 holds the controls (`y = 0`), sample 2 the cases (`y = 1`). Three
//! estimators are provided, all with covariates `x` and slopes `β`:
//!
//! * [`FullMleModel`]: the semiparametric likelihood with a discrete covariate
//!   distribution `g` on the observed support, parametrized by softmax
//!   coordinates `φ`.
//! * [`NonIdentifiableModel`]: the reparametrized model in `(α, β, log ρ₁)`;
//!   only `α + log ρ₁` is identified.
//! * [`IdentifiableModel`]: the same model in `(α*, β)` with `α* = α + log ρ₁`.

use nalgebra::{DMatrix, DVector};

use crate::data::{MultisampleDataset, Observation, Support, Weights};
use crate::error::{Error, Result};
use crate::model::{LogDensityEval, LogDensityModel, Order, ParamLayout};
use crate::reparam::{ScalarDerivs, StratifiedDesign};

pub const CONTROL: usize = 1;
pub const CASE: usize = 2;

/// Which of the three case-control estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mle,
    ReparamNonIdentifiable,
    ReparamIdentifiable,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Mle,
        Method::ReparamNonIdentifiable,
        Method::ReparamIdentifiable,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::ReparamNonIdentifiable => "reparam-nonid",
            Method::ReparamIdentifiable => "reparam-id",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// `x₂ = 100 (age + 7.5)⁻²`.
pub fn transform_age(age: f64) -> Result<f64> {
    if !(age > -7.5) || !age.is_finite() {
        return Err(Error::InvalidAge(age));
    }
    let a = age + 7.5;
    Ok(100.0 / (a * a))
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^η)` without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// `f(y | x; α, β) = exp{y(α + xᵀβ)} / (1 + exp(α + xᵀβ))` for `y ∈ {0, 1}`.
pub fn logistic_density(y: u8, x: &[f64], alpha: f64, beta: &[f64]) -> f64 {
    let eta = alpha + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    if y == 1 {
        sigmoid(eta)
    } else {
        sigmoid(-eta)
    }
}

fn case_indicator(obs: &Observation) -> Result<f64> {
    match obs.sample {
        CONTROL => Ok(0.0),
        CASE => Ok(1.0),
        s => Err(Error::InvalidObservation {
            index: 0,
            reason: format!("case-control sample must be 1 (control) or 2 (case), got {s}"),
        }),
    }
}

fn design_vector(x: &[f64]) -> DVector<f64> {
    let mut z = Vec::with_capacity(x.len() + 1);
    z.push(1.0);
    z.extend_from_slice(x);
    DVector::from_vec(z)
}

fn linear_predictor(alpha: f64, beta: &[f64], x: &[f64]) -> f64 {
    alpha + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

fn require_two(weights: &Weights) -> Result<()> {
    if weights.len() != 2 {
        return Err(Error::StrataCount {
            expected: 2,
            got: weights.len(),
        });
    }
    Ok(())
}

pub fn default_covariate_labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Logistic `f(y|x; α, β)` with the case-control partition `S_1 = {y = 0}`,
/// `S_2 = {y = 1}`; plugs into [`crate::reparam::ReparamModel`].
#[derive(Debug, Clone)]
pub struct LogisticCaseControl {
    labels: Vec<String>,
}

impl LogisticCaseControl {
    pub fn new(p: usize) -> Self {
        Self::with_labels(default_covariate_labels(p))
    }

    pub fn with_labels(covariates: Vec<String>) -> Self {
        let mut labels = vec!["intercept".to_string()];
        labels.extend(covariates);
        Self { labels }
    }
}

impl StratifiedDesign for LogisticCaseControl {
    fn n_strata(&self) -> usize {
        2
    }

    fn theta_labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn is_partition(&self) -> bool {
        true
    }

    fn log_conditional(&self, y: f64, x: &[f64], theta: &DVector<f64>) -> ScalarDerivs {
        let eta = linear_predictor(theta[0], &theta.as_slice()[1..], x);
        let z = design_vector(x);
        let p = sigmoid(eta);
        ScalarDerivs {
            value: y * eta - softplus(eta),
            grad: &z * (y - p),
            hess: (&z * z.transpose()) * (-p * (1.0 - p)),
        }
    }

    fn stratum_weight(&self, s: usize, x: &[f64], theta: &DVector<f64>) -> ScalarDerivs {
        let eta = linear_predictor(theta[0], &theta.as_slice()[1..], x);
        let z = design_vector(x);
        let p = sigmoid(eta);
        let sign = if s == CASE { 1.0 } else { -1.0 };
        let v = p * (1.0 - p);
        ScalarDerivs {
            value: if s == CASE { p } else { sigmoid(-eta) },
            grad: &z * (sign * v),
            hess: (&z * z.transpose()) * (sign * v * (1.0 - 2.0 * p)),
        }
    }

    fn stratum_responses(&self, s: usize) -> Vec<f64> {
        vec![(s - 1) as f64]
    }

    fn response_of(&self, obs: &Observation) -> Option<f64> {
        obs.response.or(Some((obs.sample - 1) as f64))
    }
}

/// `log p*_s = s(α* + xᵀβ) − log(w₀ + w₁ e^{α* + xᵀβ})` (estimation mode).
#[derive(Debug, Clone)]
pub struct IdentifiableModel {
    log_w0: f64,
    log_w1: f64,
    layout: ParamLayout,
}

impl IdentifiableModel {
    pub fn new(weights: &Weights, covariates: Vec<String>) -> Result<Self> {
        require_two(weights)?;
        let p = covariates.len();
        let mut labels = vec!["alpha_star".to_string()];
        labels.extend(covariates);
        Ok(Self {
            log_w0: weights.get(CONTROL).ln(),
            log_w1: weights.get(CASE).ln(),
            layout: ParamLayout::new(labels, (1..=p).collect(), vec![0]),
        })
    }

    /// Offset `log(w₁/w₀)` that turns this objective into a prospective logistic fit.
    pub fn offset(&self) -> f64 {
        self.log_w1 - self.log_w0
    }
}

/// Shared kernel of the two reparametrized models:
/// `c·η − log(w₀ + w₁ e^η)` with `∂/∂η = c − π`, `π = σ(η + log(w₁/w₀))`.
fn reparam_kernel(c: f64, eta: f64, log_w0: f64, log_w1: f64) -> (f64, f64, f64) {
    let a = log_w0;
    let b = log_w1 + eta;
    let lse = a.max(b) + (-(a - b).abs()).exp().ln_1p();
    let pi = sigmoid(b - a);
    (c * eta - lse, c - pi, -pi * (1.0 - pi))
}

impl LogDensityModel for IdentifiableModel {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        Method::ReparamIdentifiable.as_str()
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let c = case_indicator(obs)?;
        let x = &obs.covariates;
        let eta = linear_predictor(params[0], &params.as_slice()[1..], x);
        let (value, d1, d2) = reparam_kernel(c, eta, self.log_w0, self.log_w1);
        let z = design_vector(x);
        Ok(LogDensityEval {
            value,
            gradient: (order >= Order::Gradient).then(|| &z * d1),
            hessian: (order >= Order::Hessian).then(|| (&z * z.transpose()) * d2),
        })
    }
}

/// `log p*_s = s(α + log ρ₁ + xᵀβ) − log(w₀ + w₁ e^{α + log ρ₁ + xᵀβ})` (estimation mode).
#[derive(Debug, Clone)]
pub struct NonIdentifiableModel {
    log_w0: f64,
    log_w1: f64,
    layout: ParamLayout,
}

impl NonIdentifiableModel {
    pub fn new(weights: &Weights, covariates: Vec<String>) -> Result<Self> {
        require_two(weights)?;
        let p = covariates.len();
        let mut labels = vec!["intercept".to_string()];
        labels.extend(covariates);
        labels.push("log_rho1".into());
        Ok(Self {
            log_w0: weights.get(CONTROL).ln(),
            log_w1: weights.get(CASE).ln(),
            layout: ParamLayout::new(labels, (0..=p).collect(), vec![p + 1]),
        })
    }
}

impl LogDensityModel for NonIdentifiableModel {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        Method::ReparamNonIdentifiable.as_str()
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let c = case_indicator(obs)?;
        let x = &obs.covariates;
        let p = x.len();
        let offset = params[0] + params[p + 1];
        let eta = linear_predictor(offset, &params.as_slice()[1..=p], x);
        let (value, d1, d2) = reparam_kernel(c, eta, self.log_w0, self.log_w1);
        let mut z = design_vector(x).as_slice().to_vec();
        z.push(1.0);
        let z = DVector::from_vec(z);
        Ok(LogDensityEval {
            value,
            gradient: (order >= Order::Gradient).then(|| &z * d1),
            hessian: (order >= Order::Hessian).then(|| (&z * z.transpose()) * d2),
        })
    }
}

/// Discrete covariate distribution `g_k = exp(φ_k) / Σ_j exp(φ_j)`, `φ_K = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteG {
    pub probs: Vec<f64>,
}

impl DiscreteG {
    pub fn from_phi(phi: &[f64]) -> Self {
        let mut a = phi.to_vec();
        a.push(0.0);
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        Self {
            probs: e.into_iter().map(|v| v / total).collect(),
        }
    }

    pub fn to_phi(&self) -> Vec<f64> {
        let last = self.probs[self.probs.len() - 1].ln();
        self.probs[..self.probs.len() - 1].iter().map(|g| g.ln() - last).collect()
    }
}

/// `log p_s = log f(s|x; α, β) + Σ_k 1{x = v_k} log g_k − log Σ_k f(s|v_k; α, β) g_k`.
///
/// In softmax coordinates the `log Σ exp φ` terms cancel, leaving
/// `log f(s|x) + φ_{k(x)} − LSE_k(log f(s|v_k) + φ_k)`.
#[derive(Debug, Clone)]
pub struct FullMleModel {
    support: Support,
    layout: ParamLayout,
    p: usize,
}

impl FullMleModel {
    pub fn new(dataset: &MultisampleDataset, covariates: Vec<String>) -> Result<Self> {
        if dataset.n_samples() != 2 {
            return Err(Error::StrataCount {
                expected: 2,
                got: dataset.n_samples(),
            });
        }
        Self::on_support(dataset.support().clone(), covariates)
    }

    pub fn on_support(support: Support, covariates: Vec<String>) -> Result<Self> {
        let k = support.len();
        if k < 2 {
            return Err(Error::DegenerateSupport(k));
        }
        let p = covariates.len();
        let mut labels = vec!["intercept".to_string()];
        labels.extend(covariates);
        labels.extend((1..k).map(|j| format!("phi{j}")));
        let layout = ParamLayout::new(labels, (0..=p).collect(), (p + 1..p + k).collect());
        Ok(Self { support, layout, p })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// The covariate distribution implied by `params`.
    pub fn g(&self, params: &DVector<f64>) -> DiscreteG {
        DiscreteG::from_phi(&params.as_slice()[self.p + 1..])
    }

    /// `Q_s(α, β, g) = Σ_k f(s|v_k) g_k` for `s = 1, 2`.
    pub fn stratum_probabilities(&self, params: &DVector<f64>) -> [f64; 2] {
        let g = self.g(params);
        let beta = &params.as_slice()[1..=self.p];
        let mut out = [0.0; 2];
        for (k, v) in self.support.points().iter().enumerate() {
            let pcase = logistic_density(1, v, params[0], beta);
            out[1] += pcase * g.probs[k];
            out[0] += (1.0 - pcase) * g.probs[k];
        }
        out
    }
}

impl LogDensityModel for FullMleModel {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        Method::Mle.as_str()
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let c = case_indicator(obs)?;
        let kx = self.support.position(&obs.covariates).ok_or_else(|| Error::InvalidObservation {
            index: 0,
            reason: format!("covariate {:?} is not in the model support", obs.covariates),
        })?;
        let p = self.p;
        let dim = self.dim();
        let kk = self.support.len();
        let alpha = params[0];
        let beta = &params.as_slice()[1..=p];
        let phi = |k: usize| if k + 1 < kk { params[p + 1 + k] } else { 0.0 };

        // a_k = log f(c | v_k) + φ_k
        let mut a = Vec::with_capacity(kk);
        let mut resid = Vec::with_capacity(kk);
        let mut curv = Vec::with_capacity(kk);
        for (k, v) in self.support.points().iter().enumerate() {
            let eta = linear_predictor(alpha, beta, v);
            let pr = sigmoid(eta);
            a.push(c * eta - softplus(eta) + phi(k));
            resid.push(c - pr);
            curv.push(-pr * (1.0 - pr));
        }
        let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = amax + a.iter().map(|v| (v - amax).exp()).sum::<f64>().ln();
        let pi: Vec<f64> = a.iter().map(|v| (v - lse).exp()).collect();

        let eta_x = linear_predictor(alpha, beta, &obs.covariates);
        let value = c * eta_x - softplus(eta_x) + phi(kx) - lse;
        if order == Order::Value {
            return Ok(LogDensityEval {
                value,
                gradient: None,
                hessian: None,
            });
        }

        // gradient of a_k in full coordinates
        let da = |k: usize| -> DVector<f64> {
            let mut g = DVector::zeros(dim);
            let z = design_vector(self.support.point(k));
            g.rows_mut(0, p + 1).copy_from(&(&z * resid[k]));
            if k + 1 < kk {
                g[p + 1 + k] = 1.0;
            }
            g
        };
        let mut mean = DVector::zeros(dim);
        let mut second = DMatrix::zeros(dim, dim);
        let want_h = order >= Order::Hessian;
        for k in 0..kk {
            let g = da(k);
            mean.axpy(pi[k], &g, 1.0);
            if want_h {
                second += (&g * g.transpose()) * pi[k];
                let z = design_vector(self.support.point(k));
                let zz = (&z * z.transpose()) * (pi[k] * curv[k]);
                second.view_mut((0, 0), (p + 1, p + 1)).zip_apply(&zz, |s, v| *s += v);
            }
        }

        let zx = design_vector(&obs.covariates);
        let px = sigmoid(eta_x);
        let mut gradient = -&mean;
        gradient.rows_mut(0, p + 1).axpy(c - px, &zx, 1.0);
        if kx + 1 < kk {
            gradient[p + 1 + kx] += 1.0;
        }

        let hessian = want_h.then(|| {
            let mut h = -(second - &mean * mean.transpose());
            let zz = (&zx * zx.transpose()) * (-px * (1.0 - px));
            h.view_mut((0, 0), (p + 1, p + 1)).zip_apply(&zz, |s, v| *s += v);
            h
        });
        Ok(LogDensityEval {
            value,
            gradient: Some(gradient),
            hessian,
        })
    }
}

/// One row of the grouped case-control schema `age,scar,cases,controls`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedRow {
    pub age: f64,
    pub scar: f64,
    pub cases: u64,
    pub controls: u64,
}

/// Covariate labels of the grouped schema, in storage order.
pub fn grouped_labels() -> Vec<String> {
    vec!["scar".into(), "age".into()]
}

/// Expands grouped rows into a two-sample dataset with covariates
/// `(scar, 100 (age + 7.5)⁻²)`.
pub fn grouped_dataset(rows: &[GroupedRow]) -> Result<MultisampleDataset> {
    let mut obs = Vec::with_capacity(2 * rows.len());
    for row in rows {
        let x = vec![row.scar, transform_age(row.age)?];
        if row.cases > 0 {
            obs.push(Observation::new(CASE, Some(1.0), x.clone(), row.cases));
        }
        if row.controls > 0 {
            obs.push(Observation::new(CONTROL, Some(0.0), x, row.controls));
        }
    }
    MultisampleDataset::new(obs, 2)
}

/// Leprosy case-control data: `(age, [scar0 case, scar0 control, scar1 case, scar1 control])`.
pub const LEPROSY_TABLE: [(f64, [u64; 4]); 7] = [
    (2.5, [1, 24, 1, 31]),
    (7.5, [11, 22, 14, 39]),
    (12.5, [28, 23, 22, 27]),
    (17.5, [16, 5, 28, 22]),
    (22.5, [20, 9, 19, 12]),
    (27.5, [36, 17, 11, 5]),
    (32.5, [47, 21, 6, 3]),
];

/// The leprosy data in the grouped CSV schema.
pub const LEPROSY_CSV: &str = include_str!("../data/leprosy.csv");

pub fn leprosy_rows() -> Vec<GroupedRow> {
    LEPROSY_TABLE
        .iter()
        .flat_map(|&(age, c)| {
            [
                GroupedRow {
                    age,
                    scar: 0.0,
                    cases: c[0],
                    controls: c[1],
                },
                GroupedRow {
                    age,
                    scar: 1.0,
                    cases: c[2],
                    controls: c[3],
                },
            ]
        })
        .collect()
}

/// The bundled 28-cell leprosy dataset.
pub fn leprosy_dataset() -> MultisampleDataset {
    grouped_dataset(&leprosy_rows()).expect("bundled data is valid")
}

/// Starting values: `β = 0`, intercept `log(n_case / n_control)`, `g` uniform, `log ρ₁ = 0`.
pub fn initial_params(method: Method, dataset: &MultisampleDataset) -> DVector<f64> {
    let p = dataset.covariate_dim();
    let n = dataset.sample_sizes();
    let a0 = (n[CASE - 1] as f64 / n[CONTROL - 1] as f64).ln();
    let dim = match method {
        Method::ReparamIdentifiable => p + 1,
        Method::ReparamNonIdentifiable => p + 2,
        Method::Mle => p + dataset.support().len(),
    };
    let mut v = DVector::zeros(dim);
    v[0] = a0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_weights;

    #[test]
    fn age_transform() {
        assert_eq!(transform_age(2.5).unwrap(), 1.0);
        assert_eq!(transform_age(12.5).unwrap(), 0.25);
        assert_eq!(transform_age(32.5).unwrap(), 0.0625);
        assert!(transform_age(-7.5).is_err());
        assert!(transform_age(f64::NAN).is_err());
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic_density(1, &[0.0], 0.0, &[0.0]), 0.5);
        let l3 = 3f64.ln();
        assert!((logistic_density(1, &[1.0], 0.0, &[l3]) - 0.75).abs() < 1e-15);
        assert!((logistic_density(0, &[1.0], 0.0, &[l3]) - 0.25).abs() < 1e-15);
        assert!((logistic_density(1, &[2.0], 800.0, &[1.0]) - 1.0).abs() < 1e-15);
        assert!(logistic_density(0, &[2.0], 800.0, &[1.0]) >= 0.0);
    }

    #[test]
    fn identifiable_kernel_by_hand() {
        let w = Weights::new(vec![0.5, 0.5]).unwrap();
        let m = IdentifiableModel::new(&w, default_covariate_labels(1)).unwrap();
        let case = Observation::new(CASE, None, vec![0.0], 1);
        let e = m.evaluate(&case, &DVector::zeros(2), Order::Gradient).unwrap();
        assert!(e.value.abs() < 1e-15);
        assert!((e.gradient.unwrap()[0] - 0.5).abs() < 1e-15);

        // linear predictor log 3: log 3 - log(0.5 + 1.5) = log 1.5
        let p = DVector::from_vec(vec![3f64.ln(), 0.0]);
        let e = m.evaluate(&case, &p, Order::Value).unwrap();
        assert!((e.value - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn builders_need_two_strata() {
        let w = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(
            IdentifiableModel::new(&w, default_covariate_labels(1)),
            Err(Error::StrataCount { .. })
        ));
        assert!(NonIdentifiableModel::new(&w, default_covariate_labels(1)).is_err());
    }

    #[test]
    fn full_mle_needs_two_support_points() {
        let ds = MultisampleDataset::new(
            vec![
                Observation::new(1, None, vec![1.0], 2),
                Observation::new(2, None, vec![1.0], 3),
            ],
            2,
        )
        .unwrap();
        assert!(matches!(
            FullMleModel::new(&ds, default_covariate_labels(1)),
            Err(Error::DegenerateSupport(1))
        ));
    }

    #[test]
    fn leprosy_table_counts() {
        let ds = leprosy_dataset();
        assert_eq!(ds.sample_sizes(), &[260, 260]);
        assert_eq!(ds.support().len(), 14);
        assert_eq!(ds.observations().len(), 28);
        assert_eq!(compute_weights(&ds).unwrap().as_slice(), &[0.5, 0.5]);
        let rows = leprosy_rows();
        let age12: Vec<_> = rows.iter().filter(|r| r.age == 12.5).collect();
        assert_eq!(age12.iter().map(|r| r.cases).collect::<Vec<_>>(), vec![28, 22]);
        assert_eq!(age12.iter().map(|r| r.controls).collect::<Vec<_>>(), vec![23, 27]);
    }

    #[test]
    fn discrete_g_roundtrip() {
        let g = DiscreteG {
            probs: vec![0.2, 0.3, 0.5],
        };
        let back = DiscreteG::from_phi(&g.to_phi());
        for (a, b) in g.probs.iter().zip(&back.probs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
        }
        assert_eq!(Method::parse("bogus"), None);
    }
}
