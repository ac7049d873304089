//! Damped Newton ascent with backtracking line search.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::MultisampleDataset;
use crate::error::{Error, Result};
use crate::linalg::SymFactor;
use crate::model::{aggregate, LogDensityModel, Order, Params};

/// Relative eigenvalue size below which a curvature direction is treated as flat.
pub const NULL_CURVATURE_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Convergence threshold on `‖score‖∞`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub armijo: f64,
    pub lambda_start: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    /// A converged fit also needs `‖step‖∞ <= step_tol · max(1, ‖params‖∞)`.
    pub step_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            max_halvings: 40,
            armijo: 1e-4,
            lambda_start: 1e-8,
            lambda_factor: 10.0,
            lambda_max: 1e2,
            step_tol: 1e-4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.grad_tol,
            self.armijo,
            self.lambda_start,
            self.lambda_max,
            self.step_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.lambda_factor <= 1.0 || self.max_iter == 0 {
            return Err(Error::Config(format!("invalid fit configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Params,
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub gradient: DVector<f64>,
    /// Undamped Hessian of the log-likelihood at `params`.
    pub hessian: DMatrix<f64>,
    pub warnings: Vec<String>,
    pub runtime: Duration,
    /// Objective value after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

struct Newton {
    direction: DVector<f64>,
    lambda: f64,
}

/// Solves `(−H + λI) d = g` for the smallest admissible `λ` in the schedule.
fn newton_direction(hessian: &DMatrix<f64>, gradient: &DVector<f64>, cfg: &FitConfig) -> Option<Newton> {
    let n = hessian.nrows();
    let neg = -hessian;
    let mut lambda = 0.0;
    loop {
        let mut m = neg.clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(m) {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v * v), hi.max(v * v)));
            if lo > 1e-12 * hi {
                return Some(Newton {
                    direction: chol.solve(gradient),
                    lambda,
                });
            }
        }
        lambda = if lambda == 0.0 {
            cfg.lambda_start
        } else {
            lambda * cfg.lambda_factor
        };
        if lambda > cfg.lambda_max * (1.0 + 1e-12) {
            return None;
        }
    }
}

/// `(−H)⁺ g` ignoring directions whose curvature is negligible relative to
/// the largest. Under separation the whole Hessian vanishes with the gradient
/// and this step stays large while a damped one does not.
fn undamped_step(hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    if hessian.amax() == 0.0 {
        return if gradient.amax() == 0.0 {
            gradient.clone()
        } else {
            DVector::from_element(gradient.len(), f64::INFINITY)
        };
    }
    SymFactor::new(&(-hessian), NULL_CURVATURE_RTOL).pseudo_inverse() * gradient
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Maximizes `Σ multiplicity · log p_s` over the model parameters.
///
/// Never returns a silent success: if the iteration budget runs out or the
/// line search stalls, the result carries `converged = false`.
pub fn maximize<M: LogDensityModel + ?Sized>(
    model: &M,
    dataset: &MultisampleDataset,
    init: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut theta = init.clone();
    let mut warnings = Vec::new();
    let eval = |t: &DVector<f64>, order| match aggregate(model, t, dataset, order) {
        Ok(a) if a.value.is_finite() => Ok(a),
        Ok(_) | Err(Error::NonFiniteDensity { .. }) => Err(Error::NonFiniteObjective(t.iter().copied().collect())),
        Err(e) => Err(e),
    };
    let mut current = eval(&theta, Order::Hessian)?;
    let mut trace = vec![current.value];
    let mut iterations = 0;
    let mut converged = false;
    let mut max_lambda = 0.0f64;

    loop {
        let g = current.gradient.clone().expect("gradient");
        let h = current.hessian.clone().expect("hessian");
        let gnorm = inf_norm(&g);
        let step = match newton_direction(&h, &g, cfg) {
            Some(n) => {
                max_lambda = max_lambda.max(n.lambda);
                n.direction
            }
            None => {
                warnings.push(format!("iteration {iterations}: Hessian not negative definite, using gradient step"));
                &g / (1.0 + h.amax())
            }
        };
        let scale = inf_norm(&theta).max(1.0);
        if gnorm <= cfg.grad_tol && inf_norm(&undamped_step(&h, &g)) <= cfg.step_tol * scale {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }

        let slope = g.dot(&step);
        // objective rounding level; near the optimum the predicted increase falls below it
        let noise = 64.0 * f64::EPSILON * current.value.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = &theta + &step * t;
            if let Ok(a) = eval(&cand, Order::Value) {
                if a.value >= current.value + cfg.armijo * t * slope - noise {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            warnings.push(format!("iteration {iterations}: line search failed after {} halvings", cfg.max_halvings));
            break;
        };
        theta = next;
        current = eval(&theta, Order::Hessian)?;
        trace.push(current.value);
        iterations += 1;
    }

    if max_lambda > 0.0 {
        warnings.push(format!("Levenberg damping up to {max_lambda:.1e} was needed (singular or indefinite Hessian)"));
    }
    let gradient = current.gradient.expect("gradient");
    let grad_norm = inf_norm(&gradient);
    if !converged {
        warnings.push(format!(
            "not converged after {iterations} iterations (|grad| = {grad_norm:.3e}); parameters may diverge"
        ));
    }
    Ok(FitResult {
        params: Params::new(theta, model.layout().clone())?,
        loglik: current.value,
        iterations,
        grad_norm,
        converged,
        gradient,
        hessian: current.hessian.expect("hessian"),
        warnings,
        runtime: start.elapsed(),
        trace,
    })
}

/// Solves the score equations `Σ_s Σ_i ℓ̇(s, x_si; params) = 0`.
///
/// Same iteration as [`maximize`]; success means `‖Σ ℓ̇‖∞ <= grad_tol`.
pub fn solve_score<M: LogDensityModel + ?Sized>(
    model: &M,
    dataset: &MultisampleDataset,
    init: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    maximize(model, dataset, init, cfg)
}
