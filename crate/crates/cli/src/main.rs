//! `semest`: fit, compare and validate case-control estimators from the command line.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use semest::casecontrol::{grouped_labels, leprosy_dataset, Method};
use semest::inference::{InfoSource, ReDefinition};
use semest::io::{read_dataset, LoadedData, Schema};
use semest::methods::{compare, fit_method, FitOptions};
use semest::optimizer::FitConfig;
use semest::report::{render_comparison, render_report, ComparisonReport};
use semest::validation::{run_suite, McOptions, SuiteOptions};
use semest::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "semest", version, about = "Efficient estimation in case-control and multisample models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one method (or all) and print coefficients with standard errors.
    Fit(FitArgs),
    /// Fit all methods and report efficiencies relative to the MLE.
    Compare(CompareArgs),
    /// Run the numerical validation suite.
    Validate(ValidateArgs),
    /// Time each method on a dataset.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Leprosy,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemaArg {
    Long,
    Casecontrol,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Mle,
    ReparamNonid,
    ReparamId,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum InfoArg {
    ObservedHessian,
    CenteredMoments,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReArg {
    VarianceRatio,
    SeRatio,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// CSV file to read.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Bundled dataset.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
}

#[derive(Args)]
struct Input {
    #[command(flatten)]
    source: Source,
    /// Input layout; detected from the header when omitted.
    #[arg(long, value_enum)]
    schema: Option<SchemaArg>,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Tuning {
    /// Gradient tolerance for convergence.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Source of the information blocks used for standard errors.
    #[arg(long, value_enum)]
    info: Option<InfoArg>,
    /// Definition of relative efficiency.
    #[arg(long = "re", value_enum, default_value = "variance-ratio")]
    re: ReArg,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodArg,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also run the Monte Carlo variance check.
    #[arg(long)]
    mc: bool,
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[command(flatten)]
    output: Output,
    #[arg(long, hide = true)]
    inject_broken_score: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: Input,
    /// Repetitions per method; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. }
            | Error::NonFiniteObjective(_)
            | Error::SingularNuisance { .. }
            | Error::Indefinite(_)
            | Error::FixedPointDiverged(_)
            | Error::ReplicateFailures { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn detect_schema(text: &str) -> Schema {
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if header.replace(' ', "").starts_with("age,scar,cases,controls") {
        Schema::CaseControl
    } else {
        Schema::Long
    }
}

fn load(input: &Input) -> Result<LoadedData, Failure> {
    if input.source.builtin.is_some() {
        return Ok(LoadedData {
            dataset: leprosy_dataset(),
            covariates: grouped_labels(),
        });
    }
    let path = input.source.input.as_ref().expect("clap enforces one source");
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let schema = match input.schema {
        Some(SchemaArg::Long) => Schema::Long,
        Some(SchemaArg::Casecontrol) => Schema::CaseControl,
        None => detect_schema(&text),
    };
    let data = read_dataset(text.as_bytes(), schema)?;
    if data.dataset.n_samples() != 2 {
        return Err(input_error(format!(
            "case-control methods need exactly 2 samples, found {}",
            data.dataset.n_samples()
        )));
    }
    Ok(data)
}

fn options(t: &Tuning) -> FitOptions {
    let mut fit = FitConfig::default();
    if let Some(tol) = t.tol {
        fit.grad_tol = tol;
    }
    if let Some(m) = t.max_iter {
        fit.max_iter = m;
    }
    FitOptions {
        fit,
        info: t.info.map(|i| match i {
            InfoArg::ObservedHessian => InfoSource::ObservedHessian,
            InfoArg::CenteredMoments => InfoSource::CenteredMoments,
        }),
    }
}

fn definition(t: &Tuning) -> ReDefinition {
    match t.re {
        ReArg::VarianceRatio => ReDefinition::VarianceRatio,
        ReArg::SeRatio => ReDefinition::SeRatio,
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| input_error(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn warn_unconverged<'a>(reports: impl IntoIterator<Item = &'a semest::inference::EfficiencyReport>) -> u8 {
    let mut code = 0;
    for r in reports {
        if !r.converged {
            eprintln!("semest: {} did not converge", r.method);
            code = EXIT_NOT_CONVERGED;
        }
    }
    code
}

fn run_compare(input: &Input, output: &Output, tuning: &Tuning) -> Result<u8, Failure> {
    let data = load(input)?;
    let cmp = compare(&data.dataset, &data.covariates, &options(tuning), definition(tuning))?;
    let report = ComparisonReport::from(&cmp);
    let text = match output.format {
        Format::Table => render_comparison(&report),
        Format::Json => json(&report)?,
    };
    emit(&text, output.out.as_ref())?;
    Ok(warn_unconverged(&report.reports))
}

fn run_fit(args: &FitArgs) -> Result<u8, Failure> {
    let method = match args.method {
        MethodArg::All => return run_compare(&args.input, &args.output, &args.tuning),
        MethodArg::Mle => Method::Mle,
        MethodArg::ReparamNonid => Method::ReparamNonIdentifiable,
        MethodArg::ReparamId => Method::ReparamIdentifiable,
    };
    let data = load(&args.input)?;
    let fit = fit_method(method, &data.dataset, &data.covariates, &options(&args.tuning))?;
    let text = match args.output.format {
        Format::Table => render_report(&fit.report),
        Format::Json => json(&fit.report)?,
    };
    emit(&text, args.output.out.as_ref())?;
    Ok(warn_unconverged([&fit.report]))
}

fn run_validate(args: &ValidateArgs) -> Result<u8, Failure> {
    let opts = SuiteOptions {
        seed: args.seed,
        monte_carlo: args.mc.then(|| McOptions {
            reps: args.reps,
            seed: args.seed,
            ..McOptions::default()
        }),
        broken_score: args.inject_broken_score,
    };
    let report = run_suite(&opts)?;
    let text = match args.output.format {
        Format::Table => report.render(),
        Format::Json => json(&report)?,
    };
    emit(&text, args.output.out.as_ref())?;
    if report.passed() {
        Ok(0)
    } else {
        for c in report.failures() {
            eprintln!("semest: check failed: {}", c.name);
        }
        Ok(EXIT_VALIDATION)
    }
}

#[derive(Serialize)]
struct BenchMethod {
    method: String,
    parameters: usize,
    iterations: usize,
    converged: bool,
    median_ms: f64,
    min_ms: f64,
    max_ms: f64,
    runs_ms: Vec<f64>,
}

#[derive(Serialize)]
struct BenchReport {
    observations: u64,
    cells: usize,
    runs: usize,
    methods: Vec<BenchMethod>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_bench(args: &BenchArgs) -> Result<u8, Failure> {
    if args.runs == 0 {
        return Err(input_error("--runs must be positive"));
    }
    let data = load(&args.input)?;
    let opts = options(&args.tuning);
    let mut methods = Vec::new();
    let mut code = 0;
    for m in Method::ALL {
        let mut times = Vec::with_capacity(args.runs);
        let mut last = None;
        for _ in 0..args.runs {
            let fit = fit_method(m, &data.dataset, &data.covariates, &opts)?;
            times.push(fit.report.runtime_ms);
            last = Some(fit);
        }
        let fit = last.expect("at least one run");
        if !fit.fit.converged {
            code = EXIT_NOT_CONVERGED;
        }
        let runs_ms = times.clone();
        methods.push(BenchMethod {
            method: m.as_str().to_string(),
            parameters: fit.fit.params.values.len(),
            iterations: fit.fit.iterations,
            converged: fit.fit.converged,
            median_ms: median(&mut times),
            min_ms: times[0],
            max_ms: times[times.len() - 1],
            runs_ms,
        });
    }
    let report = BenchReport {
        observations: data.dataset.total(),
        cells: data.dataset.support().len(),
        runs: args.runs,
        methods,
    };
    let text = match args.format {
        Format::Json => json(&report)?,
        Format::Table => {
            let mut s = format!("{:<16}{:>8}{:>8}{:>14}\n", "method", "params", "iters", "median (ms)");
            for m in &report.methods {
                s += &format!("{:<16}{:>8}{:>8}{:>14.3}\n", m.method, m.parameters, m.iterations, m.median_ms);
            }
            s
        }
    };
    emit(&text, args.out.as_ref())?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Compare(a) => run_compare(&a.input, &a.output, &a.tuning),
        Command::Validate(a) => run_validate(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("semest: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
