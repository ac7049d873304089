//! Fitting the three case-control estimators and assembling their reports.

use std::time::Instant;

use crate::casecontrol::{initial_params, FullMleModel, IdentifiableModel, Method, NonIdentifiableModel};
use crate::data::{compute_weights, MultisampleDataset};
use crate::error::Result;
use crate::inference::{
    centered_scores, efficient_information, info_blocks_moments, info_blocks_observed, relative_efficiency, standard_errors,
    EfficiencyReport, EfficientInformation, InfoBlocks, InfoSource, ReDefinition, StandardErrors, ILL_CONDITIONED,
};
use crate::linalg::{SymFactor, PIVOT_RTOL};
use crate::model::LogDensityModel;
use crate::optimizer::{maximize, FitConfig, FitResult};

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub fit: FitConfig,
    pub info: Option<InfoSource>,
}

impl FitOptions {
    pub fn info_source(&self) -> InfoSource {
        self.info.unwrap_or(InfoSource::ObservedHessian)
    }
}

pub fn build_model(method: Method, dataset: &MultisampleDataset, covariates: &[String]) -> Result<Box<dyn LogDensityModel>> {
    let labels = covariates.to_vec();
    Ok(match method {
        Method::Mle => Box::new(FullMleModel::new(dataset, labels)?),
        Method::ReparamNonIdentifiable => Box::new(NonIdentifiableModel::new(&compute_weights(dataset)?, labels)?),
        Method::ReparamIdentifiable => Box::new(IdentifiableModel::new(&compute_weights(dataset)?, labels)?),
    })
}

/// Everything produced by fitting one method.
pub struct MethodFit {
    pub method: Method,
    pub model: Box<dyn LogDensityModel>,
    pub fit: FitResult,
    pub blocks: Option<InfoBlocks>,
    pub efficient: Option<EfficientInformation>,
    pub standard_errors: Option<StandardErrors>,
    pub report: EfficiencyReport,
}

impl std::fmt::Debug for MethodFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MethodFit")
            .field("method", &self.method)
            .field("report", &self.report)
            .finish()
    }
}

/// Fits `method` by damped Newton from the standard starting values and
/// computes standard errors from the efficient information.
pub fn fit_method(method: Method, dataset: &MultisampleDataset, covariates: &[String], opts: &FitOptions) -> Result<MethodFit> {
    let start = Instant::now();
    let model = build_model(method, dataset, covariates)?;
    let init = initial_params(method, dataset);
    let fit = maximize(model.as_ref(), dataset, &init, &opts.fit)?;
    let n = dataset.total() as f64;
    let mut warnings = fit.warnings.clone();

    let (blocks, efficient, ses) = if fit.converged {
        let blocks = match opts.info_source() {
            InfoSource::ObservedHessian => info_blocks_observed(&fit, n)?,
            InfoSource::CenteredMoments => {
                let scores = centered_scores(model.as_ref(), &fit.params, dataset)?;
                info_blocks_moments(&scores, &compute_weights(dataset)?)?
            }
        };
        let eff = efficient_information(&blocks)?;
        let ses = standard_errors(&eff.matrix, n)?;
        warnings.extend(ses.warnings.iter().cloned());
        (Some(blocks), Some(eff), Some(ses))
    } else {
        (None, None, None)
    };

    let observed = SymFactor::new(&(&fit.hessian * (-1.0 / n)), PIVOT_RTOL);
    let cond = observed.condition_number();
    if cond > ILL_CONDITIONED {
        warnings.push(format!("ill-conditioned observed information (condition number {cond:.3e})"));
    }

    let p = covariates.len();
    let mut labels = vec!["intercept".to_string()];
    labels.extend(covariates.iter().cloned());
    let layout = &fit.params.layout;
    let mut coef = Vec::with_capacity(p + 1);
    let mut se = Vec::with_capacity(p + 1);
    let mut unreliable = Vec::with_capacity(p + 1);
    for (row, label) in labels.iter().enumerate() {
        // identifiable model has no original intercept
        let param = if row == 0 && method == Method::ReparamIdentifiable {
            None
        } else {
            layout.index_of(label)
        };
        let slot = param.and_then(|i| layout.interest.iter().position(|&j| j == i));
        coef.push(param.map(|i| fit.params.values[i]));
        let s = match (&ses, slot) {
            (Some(ses), Some(k)) => ses.se[k],
            _ => None,
        };
        unreliable.push(param.is_some() && s.is_none());
        se.push(s);
    }

    let report = EfficiencyReport {
        method: method.as_str().to_string(),
        labels,
        coef,
        se,
        unreliable,
        loglik: fit.loglik,
        iterations: fit.iterations,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        cond_number: cond.is_finite().then_some(cond),
        converged: fit.converged,
        warnings,
    };
    Ok(MethodFit {
        method,
        model,
        fit,
        blocks,
        efficient,
        standard_errors: ses,
        report,
    })
}

/// All three methods on one dataset, with efficiencies relative to the MLE.
#[derive(Debug)]
pub struct Comparison {
    pub fits: Vec<MethodFit>,
    /// `(method, per-row relative efficiency, runtime ratio)` for each reparametrized method.
    pub relative: Vec<(Method, Vec<Option<f64>>, f64)>,
    pub definition: ReDefinition,
}

impl Comparison {
    pub fn all_converged(&self) -> bool {
        self.fits.iter().all(|f| f.fit.converged)
    }

    pub fn get(&self, method: Method) -> Option<&MethodFit> {
        self.fits.iter().find(|f| f.method == method)
    }
}

pub fn compare(dataset: &MultisampleDataset, covariates: &[String], opts: &FitOptions, definition: ReDefinition) -> Result<Comparison> {
    let fits = Method::ALL
        .iter()
        .map(|&m| fit_method(m, dataset, covariates, opts))
        .collect::<Result<Vec<_>>>()?;
    let mle = &fits[0].report;
    let relative = fits[1..]
        .iter()
        .map(|f| {
            Ok((
                f.method,
                relative_efficiency(&f.report, mle, definition)?,
                f.report.runtime_ms / mle.runtime_ms,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        fits,
        relative,
        definition,
    })
}
