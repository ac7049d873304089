use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use semest::casecontrol::{grouped_dataset, initial_params, FullMleModel, GroupedRow, IdentifiableModel, LogisticCaseControl, Method};
use semest::inference::{efficient_information, relative_efficiency, schur_identity_gap, EfficiencyReport, InfoBlocks, InfoSource, ReDefinition};
use semest::linalg::SymFactor;
use semest::methods::{fit_method, FitOptions};
use semest::model::aggregate;
use semest::reparam::{DensityMode, QVector, ReparamModel};
use semest::validation::{check_derivatives, FdConfig};
use semest::{compute_weights, Order};

fn table() -> impl Strategy<Value = Vec<GroupedRow>> {
    prop::collection::vec((0u64..6, 0u64..6), 4).prop_filter_map("both samples present", |cells| {
        let rows: Vec<GroupedRow> = cells
            .iter()
            .enumerate()
            .map(|(i, &(cases, controls))| GroupedRow {
                age: [2.5, 12.5, 22.5, 32.5][i / 2 * 2 % 4 + i % 2],
                scar: (i % 2) as f64,
                cases: cases + 1,
                controls,
            })
            .collect();
        let controls: u64 = rows.iter().map(|r| r.controls).sum();
        (controls > 0).then_some(rows)
    })
}

fn params(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, dim)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grouped_and_expanded_data_agree(rows in table(), p in params(3)) {
        let ds = grouped_dataset(&rows).unwrap();
        let ex = ds.expanded();
        let w = compute_weights(&ds).unwrap();
        let model = IdentifiableModel::new(&w, vec!["scar".into(), "age".into()]).unwrap();
        let p = DVector::from_vec(p);
        let a = aggregate(&model, &p, &ds, Order::Hessian).unwrap();
        let b = aggregate(&model, &p, &ex, Order::Hessian).unwrap();
        prop_assert!(rel(a.value, b.value) < 1e-12);
        let ga = a.gradient.unwrap();
        let gb = b.gradient.unwrap();
        prop_assert!((ga - gb).amax() < 1e-10);
        prop_assert!((a.hessian.unwrap() - b.hessian.unwrap()).amax() < 1e-10);
    }

    #[test]
    fn full_mle_derivatives_match_fd(rows in table(), p in params(3)) {
        let ds = grouped_dataset(&rows).unwrap();
        let model = FullMleModel::new(&ds, vec!["scar".into(), "age".into()]).unwrap();
        let mut v = initial_params(Method::Mle, &ds);
        v.rows_mut(0, 3).copy_from_slice(&p);
        let c = check_derivatives(&model, &ds, &[v], &FdConfig::default()).unwrap();
        prop_assert!(c.gradient_error < 1e-6 && c.hessian_error < 1e-5, "{c:?}");
    }

    #[test]
    fn normalization_holds_for_any_data(rows in table(), p in params(3), logq in -2.0f64..2.0) {
        let ds = grouped_dataset(&rows).unwrap();
        let w = compute_weights(&ds).unwrap();
        let m = ReparamModel::from_dataset(LogisticCaseControl::new(2), &ds, w, DensityMode::Full).unwrap();
        let total = m.check_normalization(&DVector::from_vec(p), &QVector::from_log_free(&[logq])).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn selection_ratios_alone_determine_g(rows in table(), p in params(3), logq in -2.0f64..2.0) {
        let ds = grouped_dataset(&rows).unwrap();
        let w = compute_weights(&ds).unwrap();
        let m = ReparamModel::from_dataset(LogisticCaseControl::new(2), &ds, w, DensityMode::Estimation).unwrap();
        let theta = DVector::from_vec(p);
        let q = QVector::from_log_free(&[logq]);
        let mass = m.g_hat_mass(&theta, &q).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn converged_fits_meet_the_gradient_tolerance(rows in table()) {
        let ds = grouped_dataset(&rows).unwrap();
        for method in Method::ALL {
            let f = fit_method(method, &ds, &["scar".into(), "age".into()], &FitOptions::default()).unwrap();
            if f.fit.converged {
                prop_assert!(f.fit.grad_norm <= 1e-8);
                let w: Vec<f64> = f.fit.trace.windows(2).map(|t| t[1] - t[0]).collect();
                prop_assert!(w.iter().all(|d| *d > -1e-10 * f.fit.trace[0].abs().max(1.0)));
            } else {
                prop_assert!(!f.fit.warnings.is_empty());
            }
        }
    }

    #[test]
    fn efficient_information_is_dominated(vals in prop::collection::vec(-1.0f64..1.0, 16)) {
        let a = DMatrix::from_row_slice(4, 4, &vals);
        let sigma = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let blocks = InfoBlocks::new(
            sigma.view((0, 0), (2, 2)).into_owned(),
            sigma.view((0, 2), (2, 2)).into_owned(),
            sigma.view((2, 2), (2, 2)).into_owned(),
            1.0,
            InfoSource::CenteredMoments,
        ).unwrap();
        let istar = efficient_information(&blocks).unwrap().matrix;
        prop_assert!((&istar - istar.transpose()).amax() < 1e-14);
        let star = SymFactor::new(&istar, 0.0);
        prop_assert!(star.min_eigenvalue() > -1e-12);
        let gap = SymFactor::new(&(&blocks.i11 - &istar), 0.0);
        prop_assert!(gap.min_eigenvalue() > -1e-12);
        prop_assert!(schur_identity_gap(&blocks, &istar) < 1e-10);
    }

    #[test]
    fn identical_reports_are_fully_efficient(se in prop::collection::vec(0.01f64..10.0, 3)) {
        let r = EfficiencyReport {
            method: "a".into(),
            labels: vec!["a".into(), "b".into(), "c".into()],
            coef: vec![Some(0.0); 3],
            se: se.iter().map(|s| Some(*s)).collect(),
            unreliable: vec![false; 3],
            loglik: 0.0,
            iterations: 1,
            runtime_ms: 1.0,
            cond_number: None,
            converged: true,
            warnings: vec![],
        };
        for d in [ReDefinition::VarianceRatio, ReDefinition::SeRatio] {
            for v in relative_efficiency(&r, &r, d).unwrap() {
                prop_assert!((v.unwrap() - 1.0).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn quasi_separation_is_not_convergence() {
    let r = |age, scar, cases, controls| GroupedRow { age, scar, cases, controls };
    // every scar-free cell is a case
    let rows = [r(2.5, 0.0, 5, 0), r(12.5, 1.0, 2, 2), r(22.5, 0.0, 6, 0), r(32.5, 1.0, 2, 3)];
    let ds = grouped_dataset(&rows).unwrap();
    for method in Method::ALL {
        let f = fit_method(method, &ds, &["scar".into(), "age".into()], &FitOptions::default()).unwrap();
        assert!(!f.fit.converged, "{method:?}");
        assert!(f.report.se.iter().all(Option::is_none));
    }
}
