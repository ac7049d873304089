use nalgebra::DVector;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use semest::casecontrol::{default_covariate_labels, IdentifiableModel, Method};
use semest::inference::{centered_scores, efficient_information, info_blocks_moments, InfoSource};
use semest::linalg::max_abs;
use semest::methods::{fit_method, FitOptions};
use semest::validation::{brute_force_info, toy_fixtures, ToyFixture};
use semest::{compute_weights, Weights};

fn fixture(name: &str) -> ToyFixture {
    toy_fixtures().into_iter().find(|f| f.name == name).unwrap()
}

fn population_istar(fx: &ToyFixture) -> nalgebra::DMatrix<f64> {
    let w = Weights::new(fx.instance.weights.clone()).unwrap();
    let model = IdentifiableModel::new(&w, default_covariate_labels(fx.instance.beta.len())).unwrap();
    brute_force_info(&fx.instance, &model, &DVector::from_vec(fx.params.clone()))
        .unwrap()
        .istar
}

#[test]
fn large_sample_efficient_information_matches_enumeration() {
    let fx = fixture("toy_two_covariates");
    let exact = population_istar(&fx);
    let mut rng = SplitMix64::seed_from_u64(2024);
    let ds = fx.instance.simulate([500_000, 500_000], &mut rng).unwrap();
    let labels = default_covariate_labels(2);
    for info in [InfoSource::ObservedHessian, InfoSource::CenteredMoments] {
        let opts = FitOptions { info: Some(info), ..FitOptions::default() };
        let f = fit_method(Method::ReparamIdentifiable, &ds, &labels, &opts).unwrap();
        let istar = &f.efficient.unwrap().matrix;
        let rel = max_abs(&(istar - &exact)) / max_abs(&exact);
        assert!(rel < 0.01, "{info:?}: {rel}");
    }
}

#[test]
fn hessian_and_moment_paths_converge() {
    let fx = fixture("toy_two_covariates");
    let labels = default_covariate_labels(2);
    let mut gaps = Vec::new();
    for (n, reps) in [(500u64, 40), (5_000, 40), (50_000, 40)] {
        let mut total = 0.0;
        for r in 0..reps {
            let mut rng = SplitMix64::seed_from_u64(1000 * n + r);
            let ds = fx.instance.simulate([n / 2, n / 2], &mut rng).unwrap();
            let f = fit_method(Method::ReparamIdentifiable, &ds, &labels, &FitOptions::default()).unwrap();
            let hess = f.efficient.as_ref().unwrap().matrix[(0, 0)];
            let scores = centered_scores(f.model.as_ref(), &f.fit.params, &ds).unwrap();
            let blocks = info_blocks_moments(&scores, &compute_weights(&ds).unwrap()).unwrap();
            let mom = efficient_information(&blocks).unwrap().matrix[(0, 0)];
            total += (hess - mom).abs();
        }
        gaps.push(total / reps as f64);
    }
    // a root-n rate shrinks the gap by about sqrt(10) per step
    assert!(gaps[1] < gaps[0] / 2.0 && gaps[2] < gaps[1] / 2.0, "{gaps:?}");
}

#[test]
fn exact_counts_reproduce_population_blocks() {
    for fx in toy_fixtures() {
        let ds = fx.instance.dataset_from_counts(&fx.counts).unwrap();
        let w = compute_weights(&ds).unwrap();
        assert_eq!(w.as_slice(), fx.instance.weights.as_slice());
        let model = IdentifiableModel::new(&w, default_covariate_labels(fx.instance.beta.len())).unwrap();
        let params = semest::Params::new(DVector::from_vec(fx.params.clone()), semest::LogDensityModel::layout(&model).clone()).unwrap();
        let scores = centered_scores(&model, &params, &ds).unwrap();
        let blocks = info_blocks_moments(&scores, &w).unwrap();
        let expected = semest::validation::matrix(&fx.expected.i11);
        assert!(max_abs(&(&blocks.i11 - expected)) < 1e-12, "{}", fx.name);
    }
}

#[test]
fn truth_is_the_fit_on_exact_counts() {
    let fx = fixture("toy_two_covariates");
    let ds = fx.instance.dataset_from_counts(&fx.counts).unwrap();
    let f = fit_method(Method::ReparamIdentifiable, &ds, &default_covariate_labels(2), &FitOptions::default()).unwrap();
    for (a, b) in f.fit.params.values.iter().zip(&fx.params) {
        assert!((a - b).abs() < 1e-9);
    }
}
