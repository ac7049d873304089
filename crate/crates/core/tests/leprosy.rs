use nalgebra::DVector;

use semest::casecontrol::{
    grouped_labels, initial_params, leprosy_dataset, FullMleModel, LogisticCaseControl, Method, CASE, CONTROL,
};
use semest::inference::{centered_scores, efficient_information, info_blocks_moments, standard_errors, InfoSource};
use semest::linalg::{is_symmetric, SymFactor};
use semest::methods::{fit_method, FitOptions, MethodFit};
use semest::model::{aggregate_hessian, aggregate_score, Restricted};
use semest::optimizer::{maximize, FitConfig};
use semest::reparam::{fstar_empirical, DensityMode, FixedPointConfig, ReparamModel};
use semest::validation::{check_derivatives, check_stationarity, stationarity_config, FdConfig};
use semest::{compute_weights, log_likelihood, MultisampleDataset};

fn fit(method: Method) -> MethodFit {
    fit_method(method, &leprosy_dataset(), &grouped_labels(), &FitOptions::default()).unwrap()
}

fn generic_model(ds: &MultisampleDataset) -> ReparamModel<LogisticCaseControl> {
    let w = compute_weights(ds).unwrap();
    ReparamModel::from_dataset(LogisticCaseControl::with_labels(grouped_labels()), ds, w, DensityMode::Estimation).unwrap()
}

#[test]
fn equal_sampling_weights() {
    let w = compute_weights(&leprosy_dataset()).unwrap();
    assert_eq!(w.as_slice(), &[0.5, 0.5]);
}

#[test]
fn pooled_covariate_mass() {
    let ds = leprosy_dataset();
    let f = fstar_empirical(&ds, &compute_weights(&ds).unwrap()).unwrap();
    assert_eq!(f.support.len(), 14);
    let x = [0.0, 1.0];
    assert!((f.at(&x) - (0.5 / 260.0 + 0.5 * 24.0 / 260.0)).abs() < 1e-15);
    assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn identifiable_optimum_matches_cell_sum() {
    // independent cell-by-cell summation at the pooled logistic fit
    let reference = 54.729_186_742_531_33;
    let f = fit(Method::ReparamIdentifiable);
    assert!((f.fit.loglik - reference).abs() < 1e-9, "{}", f.fit.loglik);
}

#[test]
fn every_method_satisfies_first_order_conditions() {
    for m in Method::ALL {
        let f = fit(m);
        assert!(f.fit.converged, "{m:?}");
        let ds = leprosy_dataset();
        let g = aggregate_score(f.model.as_ref(), &f.fit.params.values, &ds).unwrap();
        assert!(g.amax() < 1e-8, "{m:?}: {}", g.amax());
    }
}

#[test]
fn log_likelihood_is_additive() {
    let ds = leprosy_dataset();
    let model = fit(Method::ReparamIdentifiable);
    let p = &model.fit.params.values;
    let whole = log_likelihood(model.model.as_ref(), p, &ds).unwrap();
    let (a, b) = ds.observations().split_at(14);
    let a = MultisampleDataset::new(a.to_vec(), 2).unwrap();
    let b = MultisampleDataset::new(b.to_vec(), 2).unwrap();
    let parts = log_likelihood(model.model.as_ref(), p, &a).unwrap() + log_likelihood(model.model.as_ref(), p, &b).unwrap();
    assert!((whole - parts).abs() < 1e-10);
}

#[test]
fn observed_information_is_symmetric_and_matches_fd() {
    let ds = leprosy_dataset();
    for m in Method::ALL {
        let f = fit(m);
        let h = aggregate_hessian(f.model.as_ref(), &f.fit.params.values, &ds).unwrap();
        assert!(is_symmetric(&h, 1e-10));
        let check = check_derivatives(f.model.as_ref(), &ds, &[f.fit.params.values.clone()], &FdConfig::default()).unwrap();
        assert!(check.hessian_error < 1e-5, "{m:?}");
    }
}

#[test]
fn identifiable_hessian_is_negative_definite() {
    let f = fit(Method::ReparamIdentifiable);
    let e = SymFactor::new(&f.fit.hessian, 0.0);
    assert!(e.eigenvalues.iter().all(|&l| l < 0.0));
}

#[test]
fn mle_hessian_has_one_flat_direction() {
    let f = fit(Method::Mle);
    let e = SymFactor::new(&f.fit.hessian, 0.0);
    let max = e.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let flat = e.eigenvalues.iter().filter(|l| l.abs() < 1e-10 * max).count();
    assert_eq!(flat, 1);
    assert!(e.eigenvalues.iter().all(|&l| l < 1e-10 * max));
}

#[test]
fn non_identifiable_ridge_direction() {
    let f = fit(Method::ReparamNonIdentifiable);
    let info = &f.fit.hessian * (-1.0 / 520.0);
    let e = SymFactor::new(&info, 1e-10);
    assert!(e.condition_number() > 1e8);
    let null = e.null_space();
    assert_eq!(null.len(), 1);
    let v = &null[0];
    let r = DVector::from_vec(vec![1.0, 0.0, 0.0, -1.0]).normalize();
    assert!((v.dot(&r).abs() - 1.0).abs() < 1e-8, "{v}");
}

#[test]
fn flat_conditional_gives_pooled_g() {
    let ds = leprosy_dataset();
    let model = FullMleModel::new(&ds, grouped_labels()).unwrap();
    let mut base = initial_params(Method::Mle, &ds);
    base[1] = 0.0;
    base[2] = 0.0;
    let free: Vec<usize> = std::iter::once(0).chain(3..base.len()).collect();
    let r = Restricted::new(&model, base, free);
    let fit = maximize(&r, &ds, &r.initial(), &FitConfig::default()).unwrap();
    assert!(fit.converged);
    let g = model.g(&r.embed(&fit.params.values));
    for (k, p) in g.probs.iter().enumerate() {
        let pos = model.support().position(ds.support().point(k)).unwrap();
        assert!((g.probs[pos] - ds.support_frequency()[k]).abs() < 1e-8, "{k}: {p}");
    }
}

#[test]
fn moment_and_hessian_paths_agree_on_standard_errors() {
    let ds = leprosy_dataset();
    let f = fit(Method::ReparamIdentifiable);
    let scores = centered_scores(f.model.as_ref(), &f.fit.params, &ds).unwrap();
    let moments = info_blocks_moments(&scores, &compute_weights(&ds).unwrap()).unwrap();
    assert_eq!(moments.source, InfoSource::CenteredMoments);
    let istar = efficient_information(&moments).unwrap().matrix;
    let se = standard_errors(&istar, 520.0).unwrap();
    let hess = f.standard_errors.as_ref().unwrap();
    for i in 0..2 {
        let a = se.se[i].unwrap();
        let b = hess.se[i].unwrap();
        assert!((a / b - 1.0).abs() < 0.02, "{a} vs {b}");
    }
    // nuisance blocks alone estimate different quantities
    let observed = f.blocks.as_ref().unwrap();
    assert!((moments.i22[(0, 0)] / observed.i22[(0, 0)]) < 0.5);
}

#[test]
fn stratum_score_averages_vanish_at_fit() {
    let ds = leprosy_dataset();
    let model = generic_model(&ds);
    let mut init = initial_params(Method::ReparamNonIdentifiable, &ds);
    init[3] = 0.0;
    let fit = maximize(&model, &ds, &init, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    let (theta, q) = model.split(&fit.params.values);
    let n = ds.total() as f64;
    let mut mean_q = DVector::zeros(1);
    let mut mean_theta = DVector::zeros(3);
    for obs in ds.observations() {
        let y = (obs.sample - 1) as f64;
        let m = obs.multiplicity as f64 / n;
        mean_q += model.score_q(obs.sample, y, &obs.covariates, &theta, &q).unwrap() * m;
        mean_theta += model.score_theta(obs.sample, y, &obs.covariates, &theta, &q).unwrap() * m;
    }
    assert!(mean_q.amax() < 1e-8);
    assert!(mean_theta.amax() < 1e-8);
}

#[test]
fn fixed_point_equals_direct_maximization() {
    let ds = leprosy_dataset();
    let model = generic_model(&ds);
    for theta in [vec![0.0, -0.3, -4.3], vec![1.0, 0.2, -3.0], vec![-0.5, -1.0, -5.0]] {
        let theta = DVector::from_vec(theta);
        let direct = check_stationarity(&model, &theta, &ds, &stationarity_config()).unwrap();
        let fp = model.fixed_point_q(&theta, &FixedPointConfig::default()).unwrap();
        assert!((direct.q.get(1) - fp.q.get(1)).abs() < 1e-8);
        assert!(direct.value < 1e-8);
    }
}

#[test]
fn only_case_and_control_samples() {
    let ds = leprosy_dataset();
    assert_eq!(ds.sample_sizes(), &[260, 260]);
    let cases: u64 = ds.observations().iter().filter(|o| o.sample == CASE).map(|o| o.multiplicity).sum();
    let controls: u64 = ds.observations().iter().filter(|o| o.sample == CONTROL).map(|o| o.multiplicity).sum();
    assert_eq!((cases, controls), (260, 260));
}
