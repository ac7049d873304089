//! Empirical checks of the identities behind the reparametrized estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{compute_weights, MultisampleDataset};
use crate::error::{Error, Result};
use crate::inference::{centered_scores, efficient_score, info_blocks_moments, efficient_information};
use crate::linalg::max_abs;
use crate::model::{LogDensityModel, Params, Restricted};
use crate::optimizer::{maximize, FitConfig};
use crate::reparam::{DensityMode, QVector, ReparamModel, StratifiedDesign};

use super::fd::{fd_gradient, relative_error, FdConfig};

/// Inner maximization settings used by [`check_stationarity`].
pub fn stationarity_config() -> FitConfig {
    FitConfig {
        grad_tol: 1e-10,
        ..FitConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct Stationarity {
    /// `max_j |Σ_k Q_{j|X}(v_k; θ) ĝ(v_k) − q̂_j|`.
    pub value: f64,
    pub q: QVector,
    pub iterations: usize,
}

/// Maximizes the log-likelihood over `log q` with `θ` held fixed and
/// evaluates the stationarity bracket at the maximizer.
pub fn check_stationarity<D: StratifiedDesign>(
    model: &ReparamModel<D>,
    theta: &DVector<f64>,
    dataset: &MultisampleDataset,
    inner: &FitConfig,
) -> Result<Stationarity> {
    let s = model.n_strata();
    if s == 1 {
        return Ok(Stationarity {
            value: 0.0,
            q: QVector::ones(1),
            iterations: 0,
        });
    }
    let d = model.theta_dim();
    let base = model.join(theta, &QVector::ones(s));
    let restricted = Restricted::new(model, base, (d..d + s - 1).collect());
    let fit = maximize(&restricted, dataset, &restricted.initial(), inner)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
    }
    let (_, q) = model.split(&restricted.embed(&fit.params.values));
    let t = model.expected_selection(theta, &q)?;
    let value = t
        .iter()
        .enumerate()
        .map(|(j, tj)| (tj - q.get(j + 1)).abs())
        .fold(0.0, f64::max);
    Ok(Stationarity {
        value,
        q,
        iterations: fit.iterations,
    })
}

/// Random `θ` in `center ± spread` and `log q_j` in `±spread`.
pub fn random_theta_q<R: Rng + ?Sized>(center: &DVector<f64>, n_strata: usize, spread: f64, rng: &mut R) -> (DVector<f64>, QVector) {
    let theta = center.map(|c| c + rng.random_range(-spread..spread));
    let logq: Vec<f64> = (1..n_strata).map(|_| rng.random_range(-spread..spread)).collect();
    (theta, QVector::from_log_free(&logq))
}

/// Largest `|Σ_s w_s Σ p*_s − 1|` over random `(θ, q)`.
pub fn normalization_gap<D: StratifiedDesign, R: Rng + ?Sized>(
    model: &ReparamModel<D>,
    center: &DVector<f64>,
    points: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut gap = 0.0f64;
    for _ in 0..points {
        let (theta, q) = random_theta_q(center, model.n_strata(), 1.0, rng);
        gap = gap.max((model.check_normalization(&theta, &q)? - 1.0).abs());
    }
    Ok(gap)
}

/// Per-observation derivative check of `ℓ̇₁` and exact `∂/∂q` against FD of
/// `log p*_s`, plus agreement of the displayed `ℓ̇₂` with the exact one
/// after summation over the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCheck {
    pub theta_error: f64,
    pub q_error: f64,
    pub display_gap: f64,
}

pub fn check_reparam_scores<D: StratifiedDesign>(
    model: &ReparamModel<D>,
    dataset: &MultisampleDataset,
    points: &[(DVector<f64>, QVector)],
    cfg: &FdConfig,
) -> Result<ScoreCheck> {
    let s_count = model.n_strata();
    let mut out = ScoreCheck {
        theta_error: 0.0,
        q_error: 0.0,
        display_gap: 0.0,
    };
    for (theta, q) in points {
        let mut display = DVector::zeros(s_count - 1);
        let mut exact = DVector::zeros(s_count - 1);
        for obs in dataset.observations() {
            let s = obs.sample;
            let y = model.design().response_of(obs).unwrap_or(f64::NAN);
            let x = obs.covariates.as_slice();
            let st = model.score_theta(s, y, x, theta, q)?;
            let fd_t = fd_gradient(
                |t| model.log_density_star(s, y, x, t, q, DensityMode::Estimation).unwrap_or(f64::NAN),
                theta,
                cfg,
            )?;
            out.theta_error = out.theta_error.max(relative_error(st.as_slice(), fd_t.as_slice()));
            let sq = model.score_q_exact(s, y, x, theta, q)?;
            let free = DVector::from_column_slice(q.free());
            let fd_q = fd_gradient(
                |v| {
                    QVector::from_free(v.as_slice())
                        .and_then(|qq| model.log_density_star(s, y, x, theta, &qq, DensityMode::Estimation))
                        .unwrap_or(f64::NAN)
                },
                &free,
                cfg,
            )?;
            out.q_error = out.q_error.max(relative_error(sq.as_slice(), fd_q.as_slice()));
            let m = obs.multiplicity as f64;
            display += model.score_q(s, y, x, theta, q)? * m;
            exact += sq * m;
        }
        out.display_gap = out.display_gap.max(relative_error(display.as_slice(), exact.as_slice()));
    }
    Ok(out)
}

/// Least-squares residual identities of the efficient score.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCheck {
    /// Largest entry of `Σ_s w_s Ê_s(ℓ̇* ℓ̇₂ᶜᵀ)`.
    pub orthogonality: f64,
    /// Largest entry of `Σ_s w_s Ê_s(ℓ̇* ℓ̇*ᵀ) − I*` with moment blocks.
    pub second_moment_gap: f64,
}

pub fn check_projection<M: LogDensityModel + ?Sized>(model: &M, params: &Params, dataset: &MultisampleDataset) -> Result<ProjectionCheck> {
    let scores = centered_scores(model, params, dataset)?;
    let weights = compute_weights(dataset)?;
    let blocks = info_blocks_moments(&scores, &weights)?;
    let istar = efficient_information(&blocks)?.matrix;
    let eff = efficient_score(&scores, &blocks)?;
    let a = istar.nrows();
    let b = blocks.nuisance_dim();
    let mut cross = DMatrix::zeros(a, b);
    let mut second = DMatrix::zeros(a, a);
    for (r, e) in scores.rows.iter().zip(&eff) {
        let c = weights.get(r.sample) * r.multiplicity / scores.sample_sizes[r.sample - 1];
        cross += e * r.nuisance.transpose() * c;
        second += e * e.transpose() * c;
    }
    Ok(ProjectionCheck {
        orthogonality: max_abs(&cross),
        second_moment_gap: max_abs(&(second - istar)),
    })
}
