//! The log-density model contract and aggregation of per-observation
//! quantities into the multisample log-likelihood, score and Hessian.

use nalgebra::{DMatrix, DVector};

use crate::data::{MultisampleDataset, Observation};
use crate::error::{Error, Result};

/// How many derivatives an evaluation should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Labels and the interest/nuisance partition of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub labels: Vec<String>,
    pub interest: Vec<usize>,
    pub nuisance: Vec<usize>,
}

impl ParamLayout {
    pub fn new(labels: Vec<String>, interest: Vec<usize>, nuisance: Vec<usize>) -> Self {
        debug_assert_eq!(interest.len() + nuisance.len(), labels.len());
        Self {
            labels,
            interest,
            nuisance,
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub values: DVector<f64>,
    pub layout: ParamLayout,
}

impl Params {
    pub fn new(values: DVector<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                layout.dim()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn interest(&self) -> DVector<f64> {
        self.values.select_rows(&self.layout.interest)
    }

    pub fn nuisance(&self) -> DVector<f64> {
        self.values.select_rows(&self.layout.nuisance)
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.layout.index_of(label).map(|i| self.values[i])
    }
}

/// Value and optional derivatives of one log-density evaluation.
#[derive(Debug, Clone)]
pub struct LogDensityEval {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

/// A per-sample log-density family `log p_s(x; params)`.
///
/// Implementations must be pure: evaluations may run concurrently.
pub trait LogDensityModel: Send + Sync {
    fn layout(&self) -> &ParamLayout;

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval>;

    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn name(&self) -> &str {
        "model"
    }
}

impl<M: LogDensityModel + ?Sized> LogDensityModel for &M {
    fn layout(&self) -> &ParamLayout {
        (**self).layout()
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        (**self).evaluate(obs, params, order)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Multiplicity-weighted sums over a dataset.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Sums `multiplicity * log p_s` (and derivatives) over all observations,
/// in dataset order.
pub fn aggregate<M: LogDensityModel + ?Sized>(
    model: &M,
    params: &DVector<f64>,
    dataset: &MultisampleDataset,
    order: Order,
) -> Result<Aggregate> {
    let p = model.dim();
    if params.len() != p {
        return Err(Error::Dimension(format!("{} params for a {p}-parameter model", params.len())));
    }
    let mut value = 0.0;
    let mut gradient = (order >= Order::Gradient).then(|| DVector::zeros(p));
    let mut hessian = (order >= Order::Hessian).then(|| DMatrix::zeros(p, p));

    for (i, obs) in dataset.observations().iter().enumerate() {
        let eval = model.evaluate(obs, params, order)?;
        if !eval.value.is_finite() {
            return Err(Error::NonFiniteDensity {
                index: i,
                sample: obs.sample,
                covariates: obs.covariates.clone(),
                value: eval.value,
            });
        }
        let m = obs.multiplicity as f64;
        value += m * eval.value;
        if let (Some(g), Some(eg)) = (gradient.as_mut(), eval.gradient.as_ref()) {
            g.axpy(m, eg, 1.0);
        }
        if let (Some(h), Some(eh)) = (hessian.as_mut(), eval.hessian.as_ref()) {
            *h += eh * m;
        }
    }
    if let Some(h) = hessian.as_mut() {
        symmetrize(h);
    }
    Ok(Aggregate {
        value,
        gradient,
        hessian,
    })
}

/// `Σ_s Σ_i multiplicity · log p_s(x_si; params)`.
pub fn log_likelihood<M: LogDensityModel + ?Sized>(
    model: &M,
    params: &DVector<f64>,
    dataset: &MultisampleDataset,
) -> Result<f64> {
    Ok(aggregate(model, params, dataset, Order::Value)?.value)
}

pub fn aggregate_score<M: LogDensityModel + ?Sized>(
    model: &M,
    params: &DVector<f64>,
    dataset: &MultisampleDataset,
) -> Result<DVector<f64>> {
    Ok(aggregate(model, params, dataset, Order::Gradient)?
        .gradient
        .expect("gradient requested"))
}

pub fn aggregate_hessian<M: LogDensityModel + ?Sized>(
    model: &M,
    params: &DVector<f64>,
    dataset: &MultisampleDataset,
) -> Result<DMatrix<f64>> {
    Ok(aggregate(model, params, dataset, Order::Hessian)?
        .hessian
        .expect("hessian requested"))
}

/// A model with some coordinates held fixed; the remaining coordinates are free.
pub struct Restricted<M> {
    inner: M,
    base: DVector<f64>,
    free: Vec<usize>,
    layout: ParamLayout,
}

impl<M: LogDensityModel> Restricted<M> {
    /// Fixes every coordinate not listed in `free` at its value in `base`.
    pub fn new(inner: M, base: DVector<f64>, free: Vec<usize>) -> Self {
        let labels = free.iter().map(|&i| inner.layout().labels[i].clone()).collect();
        let layout = ParamLayout::new(labels, (0..free.len()).collect(), vec![]);
        Self {
            inner,
            base,
            free,
            layout,
        }
    }

    pub fn embed(&self, free_values: &DVector<f64>) -> DVector<f64> {
        let mut full = self.base.clone();
        for (j, &i) in self.free.iter().enumerate() {
            full[i] = free_values[j];
        }
        full
    }

    pub fn initial(&self) -> DVector<f64> {
        self.base.select_rows(&self.free)
    }
}

impl<M: LogDensityModel> LogDensityModel for Restricted<M> {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        self.inner.name()
    }

    fn evaluate(&self, obs: &Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let eval = self.inner.evaluate(obs, &self.embed(params), order)?;
        Ok(LogDensityEval {
            value: eval.value,
            gradient: eval.gradient.map(|g| g.select_rows(&self.free)),
            hessian: eval.hessian.map(|h| h.select_rows(&self.free).select_columns(&self.free)),
        })
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
