//! Independent oracles and the validation suite.

mod checks;
mod fd;
mod montecarlo;
mod oracle;
mod toy;

pub use checks::{
    check_projection, check_reparam_scores, check_stationarity, normalization_gap, random_theta_q, stationarity_config,
    ProjectionCheck, ScoreCheck, Stationarity,
};
pub use fd::{check_derivatives, fd_gradient, fd_jacobian, relative_error, DerivativeCheck, FdConfig};
pub use montecarlo::{
    leprosy_like_design, monte_carlo_variance, replicate_rng, replicate_seed, thread_limit, with_pool, McOptions, McReport,
    MAX_FAILURE_RATE, THREADS_ENV,
};
pub use oracle::{irls_logistic, ridge_gap, IrlsFit};
pub use toy::{brute_force_info, matrix, toy_fixtures, BruteForce, ExpectedBlocks, ToyFixture, ToyInstance, MAX_OUTCOMES};

use std::fmt::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::casecontrol::{grouped_labels, leprosy_dataset, IdentifiableModel, LogisticCaseControl, Method, NonIdentifiableModel};
use crate::data::{compute_weights, MultisampleDataset};
use crate::error::Result;
use crate::inference::{centered_scores, efficient_information, info_blocks_moments, schur_identity_gap, ReDefinition};
use crate::linalg::max_abs;
use crate::methods::{compare, Comparison, FitOptions};
use crate::model::{LogDensityEval, LogDensityModel, Order, ParamLayout};
use crate::reparam::{DensityMode, FixedPointConfig, ReparamModel};

pub const FD_GRADIENT_RTOL: f64 = 1e-6;
pub const FD_HESSIAN_RTOL: f64 = 1e-5;
pub const FD_POINTS: usize = 20;
pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const NORMALIZATION_POINTS: usize = 50;
pub const STATIONARITY_TOL: f64 = 1e-8;
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const TOY_FIXED_POINT_TOL: f64 = 1e-10;
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
pub const SCHUR_TOL: f64 = 1e-10;
pub const IRLS_TOL: f64 = 1e-8;
pub const BRUTE_FORCE_TOL: f64 = 1e-12;
pub const RIDGE_TOL: f64 = 1e-12;
pub const MC_RATIO_RANGE: (f64, f64) = (0.9, 1.1);
pub const MC_SCALING_TOL: f64 = 0.1;
/// Sample size of the second Monte Carlo run used for the `√n` check.
pub const MC_LARGE_N: u64 = 2080;

/// Adds a constant to the first score coordinate of the wrapped model,
/// leaving its value and Hessian alone.
pub struct BrokenScore<M> {
    pub inner: M,
    pub offset: f64,
}

impl<M: LogDensityModel> LogDensityModel for BrokenScore<M> {
    fn layout(&self) -> &ParamLayout {
        self.inner.layout()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }

    fn evaluate(&self, obs: &crate::data::Observation, params: &DVector<f64>, order: Order) -> Result<LogDensityEval> {
        let mut e = self.inner.evaluate(obs, params, order)?;
        if let Some(g) = e.gradient.as_mut() {
            g[0] += self.offset;
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value < threshold,
            value,
            threshold,
            detail: String::new(),
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            passed: value > threshold,
            ..Self::below(name, value, threshold)
        }
    }

    fn failed(name: impl Into<String>, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail,
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub monte_carlo: Vec<McReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = write!(out, "{status}  {:<40} {:>11.3e}  (limit {:.1e})", c.name, c.value, c.threshold);
            if !c.detail.is_empty() {
                let _ = write!(out, "  {}", c.detail);
            }
            out.push('\n');
        }
        for r in &self.monte_carlo {
            let _ = writeln!(out, "\nMonte Carlo: {} n={} reps={} seed={} failures={}", r.method, r.n, r.reps, r.seed, r.failures);
            let _ = writeln!(out, "{:<8} {:>10} {:>10} {:>10} {:>10} {:>8}", "coef", "truth", "mean", "sd", "mean se", "sd/se");
            for j in 0..r.labels.len() {
                let _ = writeln!(
                    out,
                    "{:<8} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>8.4}",
                    r.labels[j], r.truth[j], r.mean[j], r.sd[j], r.mean_se[j], r.ratio[j]
                );
            }
        }
        let failed = self.failures().len();
        let _ = writeln!(out, "\n{} checks, {} failed", self.checks.len(), failed);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    pub monte_carlo: Option<McOptions>,
    /// Test hook: perturb the identifiable model's score before the FD check.
    pub broken_score: bool,
}

fn record(checks: &mut Vec<CheckResult>, name: &str, result: Result<Vec<CheckResult>>) {
    match result {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(CheckResult::failed(name, e.to_string())),
    }
}

fn perturbed(center: &DVector<f64>, count: usize, spread: f64, rng: &mut SplitMix64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| center.map(|c| c + rng.random_range(-spread..spread)))
        .collect()
}

fn fd_checks<M: LogDensityModel + ?Sized>(
    name: &str,
    model: &M,
    dataset: &MultisampleDataset,
    center: &DVector<f64>,
    rng: &mut SplitMix64,
) -> Result<Vec<CheckResult>> {
    let points = perturbed(center, FD_POINTS, 0.5, rng);
    let c = check_derivatives(model, dataset, &points, &FdConfig::default())?;
    Ok(vec![
        CheckResult::below(format!("fd/{name}/gradient"), c.gradient_error, FD_GRADIENT_RTOL),
        CheckResult::below(format!("fd/{name}/hessian"), c.hessian_error, FD_HESSIAN_RTOL),
    ])
}

fn generic_model(dataset: &MultisampleDataset, mode: DensityMode) -> Result<ReparamModel<LogisticCaseControl>> {
    ReparamModel::from_dataset(
        LogisticCaseControl::with_labels(grouped_labels()),
        dataset,
        compute_weights(dataset)?,
        mode,
    )
}

fn derivative_suite(cmp: &Comparison, ds: &MultisampleDataset, opts: &SuiteOptions, rng: &mut SplitMix64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let weights = compute_weights(ds)?;
    for f in &cmp.fits {
        let center = &f.fit.params.values;
        if f.method == Method::ReparamIdentifiable && opts.broken_score {
            let broken = BrokenScore {
                inner: IdentifiableModel::new(&weights, grouped_labels())?,
                offset: 1e-3,
            };
            out.extend(fd_checks(f.method.as_str(), &broken, ds, center, rng)?);
        } else {
            out.extend(fd_checks(f.method.as_str(), f.model.as_ref(), ds, center, rng)?);
        }
    }
    let id = &cmp.get(Method::ReparamIdentifiable).expect("fitted").fit.params.values;
    let mut center = id.as_slice().to_vec();
    center.push(0.0);
    let center = DVector::from_vec(center);
    for (name, mode) in [("reparam-generic", DensityMode::Estimation), ("reparam-generic-full", DensityMode::Full)] {
        out.extend(fd_checks(name, &generic_model(ds, mode)?, ds, &center, rng)?);
    }

    let model = generic_model(ds, DensityMode::Estimation)?;
    let theta_center = id.clone();
    let points: Vec<_> = (0..FD_POINTS)
        .map(|_| random_theta_q(&theta_center, model.n_strata(), 0.5, rng))
        .collect();
    let sc = check_reparam_scores(&model, ds, &points, &FdConfig::default())?;
    out.push(CheckResult::below("fd/reparam-per-observation/theta", sc.theta_error, FD_GRADIENT_RTOL));
    out.push(CheckResult::below("fd/reparam-per-observation/q", sc.q_error, FD_GRADIENT_RTOL));
    out.push(CheckResult::below("scores/displayed-q-score-sum", sc.display_gap, 1e-10));
    Ok(out)
}

fn identity_suite(cmp: &Comparison, ds: &MultisampleDataset, rng: &mut SplitMix64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let id = cmp.get(Method::ReparamIdentifiable).expect("fitted").fit.params.values.clone();

    let full = generic_model(ds, DensityMode::Full)?;
    let gap = normalization_gap(&full, &id, NORMALIZATION_POINTS, rng)?;
    out.push(CheckResult::below("normalization", gap, NORMALIZATION_TOL));

    let model = generic_model(ds, DensityMode::Estimation)?;
    let mut worst = 0.0f64;
    let mut fixed_gap = 0.0f64;
    let step = DVector::from_element(id.len(), 0.1);
    for t in -2..=2 {
        let theta = &id + &step * t as f64;
        let st = check_stationarity(&model, &theta, ds, &stationarity_config())?;
        worst = worst.max(st.value);
        let fp = model.fixed_point_q(&theta, &FixedPointConfig::default())?;
        let diff = fp
            .q
            .free()
            .iter()
            .zip(st.q.free())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        fixed_gap = fixed_gap.max(diff);
    }
    out.push(CheckResult::below("stationarity/grid", worst, STATIONARITY_TOL).with_detail("5 points"));
    out.push(CheckResult::below("stationarity/fixed-point-vs-direct", fixed_gap, FIXED_POINT_TOL));

    let mut theta = id.clone();
    theta[0] = 0.0;
    let loose = crate::optimizer::FitConfig {
        grad_tol: 1e-2,
        step_tol: 1e6,
        ..crate::optimizer::FitConfig::default()
    };
    let neg = check_stationarity(&model, &theta, ds, &loose)?;
    out.push(
        CheckResult::above("stationarity/negative-control", neg.value, STATIONARITY_TOL)
            .with_detail("inner grad_tol 1e-2 must be detected"),
    );

    let nonid = NonIdentifiableModel::new(&compute_weights(ds)?, grouped_labels())?;
    let nonid_center = &cmp.get(Method::ReparamNonIdentifiable).expect("fitted").fit.params.values;
    let points = perturbed(nonid_center, FD_POINTS, 0.5, rng);
    let gap = ridge_gap(&nonid, ds, &points, &[-2.0, -0.5, 0.25, 1.0, 3.0])?;
    out.push(CheckResult::below("ridge-invariance", gap, RIDGE_TOL));
    Ok(out)
}

fn fit_suite(cmp: &Comparison, ds: &MultisampleDataset) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for f in &cmp.fits {
        let name = f.method.as_str();
        if !f.fit.converged {
            out.push(CheckResult::failed(format!("fit/{name}"), "did not converge".into()));
            continue;
        }
        let pc = check_projection(f.model.as_ref(), &f.fit.params, ds)?;
        out.push(CheckResult::below(format!("orthogonality/{name}"), pc.orthogonality, ORTHOGONALITY_TOL));
        out.push(CheckResult::below(
            format!("efficient-score-second-moment/{name}"),
            pc.second_moment_gap,
            ORTHOGONALITY_TOL,
        ));
        let (Some(blocks), Some(eff)) = (&f.blocks, &f.efficient) else {
            out.push(CheckResult::failed(format!("schur/{name}"), "no information blocks".into()));
            continue;
        };
        out.push(CheckResult::below(
            format!("schur/{name}"),
            schur_identity_gap(blocks, &eff.matrix),
            SCHUR_TOL,
        ));
    }
    let id = cmp.get(Method::ReparamIdentifiable).expect("fitted");
    let model = IdentifiableModel::new(&compute_weights(ds)?, grouped_labels())?;
    let irls = irls_logistic(ds, model.offset(), 1e-14, 100)?;
    let coef = &id.fit.params.values;
    let gap = (1..coef.len())
        .map(|i| (coef[i] - irls.coef[i]).abs())
        .fold(0.0, f64::max);
    out.push(CheckResult::below("oracle/irls-slopes", gap, IRLS_TOL));
    Ok(out)
}

fn toy_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for fx in toy_fixtures() {
        let p = fx.instance.beta.len();
        let labels = crate::casecontrol::default_covariate_labels(p);
        let expected = matrix(&fx.expected.istar);
        let params = DVector::from_vec(fx.params.clone());
        let w = crate::data::Weights::new(fx.instance.weights.clone())?;
        let model = IdentifiableModel::new(&w, labels.clone())?;
        let bf = brute_force_info(&fx.instance, &model, &params)?;
        out.push(CheckResult::below(
            format!("brute-force/{}/fixture", fx.name),
            max_abs(&(&bf.istar - &expected)),
            BRUTE_FORCE_TOL,
        ));

        let ds = fx.instance.dataset_from_counts(&fx.counts)?;
        let dw = compute_weights(&ds)?;
        let model = IdentifiableModel::new(&dw, labels)?;
        let scores = centered_scores(&model, &crate::model::Params::new(params.clone(), model.layout().clone())?, &ds)?;
        let blocks = info_blocks_moments(&scores, &dw)?;
        if max_abs(&bf.blocks.i22) == 0.0 {
            let gap = max_abs(&(&blocks.i11 - &expected)).max(max_abs(&blocks.i12));
            out.push(
                CheckResult::below(format!("brute-force/{}/inference", fx.name), gap, BRUTE_FORCE_TOL)
                    .with_detail("nuisance block vanishes; I* = I11"),
            );
        } else {
            let istar = efficient_information(&blocks)?.matrix;
            out.push(CheckResult::below(
                format!("brute-force/{}/inference", fx.name),
                max_abs(&(&istar - &expected)),
                BRUTE_FORCE_TOL,
            ));
        }

        let generic = ReparamModel::from_dataset(LogisticCaseControl::new(p), &ds, dw, DensityMode::Estimation)?;
        let fp = generic.fixed_point_q(&fx.instance.theta(), &FixedPointConfig::default())?;
        out.push(CheckResult::below(
            format!("fixed-point/{}", fx.name),
            (fp.q.get(1) - fx.instance.true_q()).abs(),
            TOY_FIXED_POINT_TOL,
        ));
    }
    Ok(out)
}

fn monte_carlo_suite(mc: &McOptions, reports: &mut Vec<McReport>) -> Result<Vec<CheckResult>> {
    let design = leprosy_like_design();
    let small = monte_carlo_variance(&design, mc)?;
    let large = monte_carlo_variance(
        &design,
        &McOptions {
            n: MC_LARGE_N,
            ..*mc
        },
    )?;
    let mut out = Vec::new();
    let (lo, hi) = MC_RATIO_RANGE;
    let expected = (MC_LARGE_N as f64 / mc.n as f64).sqrt();
    for j in 0..small.labels.len() {
        let r = small.ratio[j];
        out.push(CheckResult {
            name: format!("monte-carlo/sd-over-se/{}", small.labels[j]),
            passed: (lo..=hi).contains(&r),
            value: r,
            threshold: hi,
            detail: format!("must lie in [{lo}, {hi}]"),
        });
        let scaling = small.mean_se[j] / large.mean_se[j];
        let rel = (scaling / expected - 1.0).abs();
        out.push(
            CheckResult::below(format!("monte-carlo/sqrt-n-scaling/{}", small.labels[j]), rel, MC_SCALING_TOL)
                .with_detail(format!("se ratio {scaling:.4}, expected {expected:.4}")),
        );
    }
    reports.push(small);
    reports.push(large);
    Ok(out)
}

/// Runs every check on the bundled leprosy data and the toy fixtures.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let ds = leprosy_dataset();
    let cmp = compare(&ds, &grouped_labels(), &FitOptions::default(), ReDefinition::default())?;
    let mut rng = SplitMix64::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    record(&mut checks, "fd", derivative_suite(&cmp, &ds, opts, &mut rng));
    record(&mut checks, "identities", identity_suite(&cmp, &ds, &mut rng));
    record(&mut checks, "fits", fit_suite(&cmp, &ds));
    record(&mut checks, "brute-force", toy_suite());
    let mut monte_carlo = Vec::new();
    if let Some(mc) = &opts.monte_carlo {
        let r = monte_carlo_suite(mc, &mut monte_carlo);
        record(&mut checks, "monte-carlo", r);
    }
    Ok(SuiteReport { checks, monte_carlo })
}
