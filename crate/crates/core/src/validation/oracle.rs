//! Independent reference computations for the case-control models.

use nalgebra::{DMatrix, DVector};

use crate::casecontrol::{sigmoid, NonIdentifiableModel, CASE};
use crate::data::MultisampleDataset;
use crate::error::{Error, Result};
use crate::model::log_likelihood;

#[derive(Debug, Clone)]
pub struct IrlsFit {
    /// `(intercept, slopes)`.
    pub coef: DVector<f64>,
    pub iterations: usize,
}

/// Prospective logistic regression of the case indicator on `(1, x)` with a
/// fixed offset, by iteratively reweighted least squares.
pub fn irls_logistic(dataset: &MultisampleDataset, offset: f64, tol: f64, max_iter: usize) -> Result<IrlsFit> {
    let p = dataset.covariate_dim() + 1;
    let mut b = DVector::zeros(p);
    for it in 1..=max_iter {
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for obs in dataset.observations() {
            let mut z = DVector::from_element(p, 1.0);
            z.rows_mut(1, p - 1).copy_from_slice(&obs.covariates);
            let eta = z.dot(&b) + offset;
            let mu = sigmoid(eta);
            let w = mu * (1.0 - mu);
            let y = if obs.sample == CASE { 1.0 } else { 0.0 };
            let work = eta - offset + (y - mu) / w;
            let m = obs.multiplicity as f64;
            xtwx += &z * z.transpose() * (m * w);
            xtwz += &z * (m * w * work);
        }
        let next = xtwx
            .cholesky()
            .ok_or_else(|| Error::Indefinite(f64::NAN))?
            .solve(&xtwz);
        let delta = (&next - &b).amax();
        b = next;
        if delta <= tol * b.amax().max(1.0) {
            return Ok(IrlsFit { coef: b, iterations: it });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        grad_norm: f64::NAN,
    })
}

/// Largest change of the non-identifiable log-likelihood when moving along
/// the ridge `(α + c, β, log ρ₁ − c)`.
pub fn ridge_gap(model: &NonIdentifiableModel, dataset: &MultisampleDataset, points: &[DVector<f64>], shifts: &[f64]) -> Result<f64> {
    let last = dataset.covariate_dim() + 1;
    let mut gap = 0.0f64;
    for p in points {
        let base = log_likelihood(model, p, dataset)?;
        for &c in shifts {
            let mut moved = p.clone();
            moved[0] += c;
            moved[last] -= c;
            gap = gap.max((log_likelihood(model, &moved, dataset)? - base).abs());
        }
    }
    Ok(gap)
}
