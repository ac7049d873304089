//! One PASS/FAIL line per acceptance criterion on the leprosy data.

use std::time::{Duration, Instant};

use semest::casecontrol::{grouped_labels, leprosy_dataset, Method};
use semest::inference::ReDefinition;
use semest::methods::{compare, fit_method, Comparison, FitOptions};
use semest::validation::{leprosy_like_design, monte_carlo_variance, run_suite, McOptions, SuiteOptions, THREADS_ENV};

const COEF_TOL: f64 = 5e-4;
const SE_TOL: f64 = 5e-4;
const RE_TOL: f64 = 2e-4;
const RUNTIME_LIMIT: Duration = Duration::from_secs(5);
const SUITE_LIMIT: Duration = Duration::from_secs(60);
const TIMING_RUNS: usize = 5;

const COEF_TARGET: [(Method, [f64; 2]); 3] = [
    (Method::Mle, [-0.30205, -4.30992]),
    (Method::ReparamNonIdentifiable, [-0.30211, -4.31017]),
    (Method::ReparamIdentifiable, [-0.30215, -4.30988]),
];
const SE_TARGET: [(Method, [f64; 2]); 3] = [
    (Method::Mle, [0.19737, 0.57891]),
    (Method::ReparamNonIdentifiable, [0.19737, 0.57892]),
    (Method::ReparamIdentifiable, [0.19736, 0.57889]),
];
const RE_TARGET: [(Method, [f64; 2]); 2] = [
    (Method::ReparamNonIdentifiable, [0.99997, 1.00005]),
    (Method::ReparamIdentifiable, [0.99992, 0.99994]),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn slopes(v: &[Option<f64>]) -> Option<[f64; 2]> {
    Some([v[1]?, v[2]?])
}

/// Largest deviation from `targets`, None if a value is missing.
fn worst(pairs: impl Iterator<Item = (Option<[f64; 2]>, [f64; 2])>) -> Option<f64> {
    pairs
        .map(|(got, want)| got.map(|g| (g[0] - want[0]).abs().max((g[1] - want[1]).abs())))
        .try_fold(0.0f64, |acc, d| Some(acc.max(d?)))
}

fn leprosy_compare() -> (Comparison, Duration) {
    let start = Instant::now();
    let c = compare(&leprosy_dataset(), &grouped_labels(), &FitOptions::default(), ReDefinition::VarianceRatio).unwrap();
    (c, start.elapsed())
}

fn coefficients() -> Outcome {
    let (c, elapsed) = leprosy_compare();
    let dev = worst(COEF_TARGET.iter().map(|(m, t)| (slopes(&c.get(*m).unwrap().report.coef), *t)));
    let fitted: Vec<String> = COEF_TARGET
        .iter()
        .map(|(m, _)| format!("{m:?} {:?}", slopes(&c.get(*m).unwrap().report.coef)))
        .collect();
    Outcome {
        passed: c.all_converged() && dev.is_some_and(|d| d <= COEF_TOL) && elapsed < RUNTIME_LIMIT,
        detail: format!("max dev {dev:?} (tol {COEF_TOL}), total {elapsed:.2?}; {}", fitted.join(", ")),
    }
}

fn standard_errors() -> Outcome {
    let (c, _) = leprosy_compare();
    let dev = worst(SE_TARGET.iter().map(|(m, t)| (slopes(&c.get(*m).unwrap().report.se), *t)));
    Outcome {
        passed: dev.is_some_and(|d| d <= SE_TOL),
        detail: format!("max dev {dev:?} (tol {SE_TOL})"),
    }
}

fn relative_efficiency() -> Outcome {
    let (c, _) = leprosy_compare();
    let dev = worst(RE_TARGET.iter().map(|(m, t)| {
        let row = c.relative.iter().find(|r| r.0 == *m).unwrap();
        (slopes(&row.1), *t)
    }));
    let values: Vec<String> = c.relative.iter().map(|r| format!("{:?} {:?}", r.0, slopes(&r.1))).collect();
    Outcome {
        passed: dev.is_some_and(|d| d <= RE_TOL),
        detail: format!("variance ratio, max dev {dev:?} (tol {RE_TOL}); {}", values.join(", ")),
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn timing() -> Outcome {
    let ds = leprosy_dataset();
    let labels = grouped_labels();
    let mut times = Vec::new();
    let mut dims = Vec::new();
    for m in Method::ALL {
        let runs: Vec<Duration> = (0..TIMING_RUNS)
            .map(|_| {
                let start = Instant::now();
                let f = fit_method(m, &ds, &labels, &FitOptions::default()).unwrap();
                assert!(f.fit.converged);
                start.elapsed()
            })
            .collect();
        times.push(median(runs));
        dims.push(fit_method(m, &ds, &labels, &FitOptions::default()).unwrap().model.dim());
    }
    Outcome {
        passed: (1..3).all(|i| times[i] < times[0] && dims[i] < dims[0]),
        detail: format!("median times {times:?}, parameters {dims:?} (mle, reparam-nonid, reparam-id)"),
    }
}

fn property_suite() -> Outcome {
    let start = Instant::now();
    let report = run_suite(&SuiteOptions { seed: 42, ..SuiteOptions::default() }).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    Outcome {
        passed: failed.is_empty() && elapsed < SUITE_LIMIT,
        detail: format!("{} checks, failed {failed:?}, {elapsed:.2?}", report.checks.len()),
    }
}

fn monte_carlo() -> Outcome {
    let opts = SuiteOptions {
        seed: 42,
        monte_carlo: Some(McOptions::default()),
        ..SuiteOptions::default()
    };
    let report = run_suite(&opts).unwrap();
    let mc_failed: Vec<&str> = report
        .failures()
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| n.starts_with("monte-carlo"))
        .collect();
    let mc_checks = report.checks.iter().filter(|c| c.name.starts_with("monte-carlo")).count();
    let summary: Vec<String> = report
        .monte_carlo
        .iter()
        .map(|r| format!("n={} sd/se {:.3?}", r.n, r.ratio))
        .collect();

    // same seed, different worker counts
    let design = leprosy_like_design();
    let runs: Vec<_> = ["1", "3", "0"]
        .iter()
        .map(|t| {
            std::env::set_var(THREADS_ENV, t);
            let r = monte_carlo_variance(&design, &McOptions { reps: 100, ..McOptions::default() }).unwrap();
            serde_json::to_string(&r).unwrap()
        })
        .collect();
    std::env::remove_var(THREADS_ENV);
    let reproducible = runs.windows(2).all(|w| w[0] == w[1]);

    Outcome {
        passed: mc_checks > 0 && mc_failed.is_empty() && reproducible,
        detail: format!("{mc_checks} checks, failed {mc_failed:?}; {}; bit-identical across threads: {reproducible}", summary.join(", ")),
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("1 coefficients", coefficients),
        ("2 standard errors", standard_errors),
        ("3 relative efficiency", relative_efficiency),
        ("4 timing ordering", timing),
        ("5 property suite", property_suite),
        ("6 monte carlo", monte_carlo),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
