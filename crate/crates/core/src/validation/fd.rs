//! Central finite differences.

use nalgebra::{DMatrix, DVector};

use crate::data::MultisampleDataset;
use crate::error::{Error, Result};
use crate::model::{aggregate, LogDensityModel, Order};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Relative step; coordinate `i` uses `step · max(1, |x_i|)`.
    pub step: f64,
    /// Combine steps `h` and `h/2` by Richardson extrapolation.
    pub richardson: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            richardson: false,
        }
    }
}

impl FdConfig {
    fn check(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("finite difference step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

fn central<T, F>(f: &F, x: &DVector<f64>, i: usize, h: f64) -> Result<T>
where
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
    F: Fn(&DVector<f64>) -> Result<T>,
{
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[i] += h;
    xm[i] -= h;
    Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
}

fn derivative<T, F>(f: &F, x: &DVector<f64>, i: usize, cfg: &FdConfig) -> Result<T>
where
    T: Clone + std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T> + std::ops::Mul<f64, Output = T>,
    F: Fn(&DVector<f64>) -> Result<T>,
{
    let h = cfg.step * x[i].abs().max(1.0);
    let d = central(f, x, i, h)?;
    if !cfg.richardson {
        return Ok(d);
    }
    let d2 = central(f, x, i, h / 2.0)?;
    Ok((d2 * 4.0 - d) / 3.0)
}

fn finite_scalar<F: Fn(&DVector<f64>) -> f64>(f: &F) -> impl Fn(&DVector<f64>) -> Result<f64> + '_ {
    move |x| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteSample(x.iter().copied().collect()))
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, cfg: &FdConfig) -> Result<DVector<f64>> {
    cfg.check()?;
    let g = finite_scalar(&f);
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        out[i] = derivative(&g, x, i, cfg)?;
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector field; column `i` is `∂f/∂x_i`.
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>> {
    cfg.check()?;
    let checked = |p: &DVector<f64>| {
        let v = f(p);
        if v.iter().all(|e| e.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteSample(p.iter().copied().collect()))
        }
    };
    let m = checked(x)?.len();
    let mut out = DMatrix::zeros(m, x.len());
    for i in 0..x.len() {
        out.set_column(i, &derivative(&checked, x, i, cfg)?);
    }
    Ok(out)
}

/// `max |a − b| / max(1, max |b|)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Worst analytic-vs-FD discrepancy of a model's aggregate derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub model: String,
    pub points: usize,
    pub gradient_error: f64,
    pub hessian_error: f64,
}

/// Compares the aggregate score with FD of the log-likelihood, and the
/// aggregate Hessian with FD of the score, at every point.
pub fn check_derivatives<M: LogDensityModel + ?Sized>(
    model: &M,
    dataset: &MultisampleDataset,
    points: &[DVector<f64>],
    cfg: &FdConfig,
) -> Result<DerivativeCheck> {
    let mut gerr = 0.0f64;
    let mut herr = 0.0f64;
    for p in points {
        let analytic = aggregate(model, p, dataset, Order::Hessian)?;
        let g = analytic.gradient.expect("gradient");
        let h = analytic.hessian.expect("hessian");
        let fd_g = fd_gradient(
            |t| aggregate(model, t, dataset, Order::Value).map_or(f64::NAN, |a| a.value),
            p,
            cfg,
        )?;
        let fd_h = fd_jacobian(
            |t| {
                aggregate(model, t, dataset, Order::Gradient)
                    .ok()
                    .and_then(|a| a.gradient)
                    .unwrap_or_else(|| DVector::from_element(p.len(), f64::NAN))
            },
            p,
            cfg,
        )?;
        gerr = gerr.max(relative_error(g.as_slice(), fd_g.as_slice()));
        herr = herr.max(relative_error(h.as_slice(), fd_h.as_slice()));
    }
    Ok(DerivativeCheck {
        model: model.name().to_string(),
        points: points.len(),
        gradient_error: gerr,
        hessian_error: herr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let g = fd_gradient(|x| x[0] * x[0], &DVector::from_vec(vec![1.0]), &FdConfig::default()).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn linear_is_exact() {
        let f = |x: &DVector<f64>| 3.0 * x[0] - 2.0 * x[1];
        let g = fd_gradient(f, &DVector::from_vec(vec![0.25, -0.5]), &FdConfig::default()).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn richardson_improves_cubic() {
        let f = |x: &DVector<f64>| x[0].powi(3);
        let x = DVector::from_vec(vec![2.0]);
        let cfg = FdConfig {
            step: 1e-3,
            richardson: true,
        };
        let g = fd_gradient(f, &x, &cfg).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_sample_is_an_error() {
        let f = |x: &DVector<f64>| x[0].ln();
        let err = fd_gradient(f, &DVector::from_vec(vec![0.0]), &FdConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteSample(_))));
    }

    #[test]
    fn zero_step_rejected() {
        let cfg = FdConfig {
            step: 0.0,
            richardson: false,
        };
        assert!(fd_gradient(|x| x[0], &DVector::zeros(1), &cfg).is_err());
    }

    #[test]
    fn jacobian_of_quadratic_form() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![2.0 * x[0] + x[1], x[0] + 4.0 * x[1]]);
        let j = fd_jacobian(f, &DVector::from_vec(vec![1.0, 1.0]), &FdConfig::default()).unwrap();
        assert!((j[(0, 0)] - 2.0).abs() < 1e-8 && (j[(1, 1)] - 4.0).abs() < 1e-8);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-8 && (j[(1, 0)] - 1.0).abs() < 1e-8);
    }
}
