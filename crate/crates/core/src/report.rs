//! Text and JSON rendering of fit reports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::inference::{EfficiencyReport, ReDefinition};
use crate::methods::Comparison;

const LABEL_WIDTH: usize = 16;
const CELL_WIDTH: usize = 12;

/// Relative efficiencies of one method against the MLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRow {
    pub method: String,
    pub efficiency: Vec<Option<f64>>,
    pub runtime_ratio: f64,
}

/// Serializable form of a [`Comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub definition: ReDefinition,
    pub reports: Vec<EfficiencyReport>,
    pub relative: Vec<RelativeRow>,
}

impl From<&Comparison> for ComparisonReport {
    fn from(c: &Comparison) -> Self {
        Self {
            definition: c.definition,
            reports: c.fits.iter().map(|f| f.report.clone()).collect(),
            relative: c
                .relative
                .iter()
                .map(|(m, eff, ratio)| RelativeRow {
                    method: m.as_str().to_string(),
                    efficiency: eff.clone(),
                    runtime_ratio: *ratio,
                })
                .collect(),
        }
    }
}

fn number(v: f64) -> String {
    format!("{v:.5}")
}

fn coef_cell(r: &EfficiencyReport, i: usize) -> String {
    match r.coef[i] {
        None => "--".into(),
        Some(v) if r.unreliable.get(i).copied().unwrap_or(false) => format!("{}!", number(v)),
        Some(v) => number(v),
    }
}

fn se_cell(r: &EfficiencyReport, i: usize) -> String {
    match r.se[i] {
        Some(v) => number(v),
        None if r.coef[i].is_some() => "inf!".into(),
        None => "--".into(),
    }
}

fn row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<LABEL_WIDTH$}");
    for c in cells {
        let _ = write!(out, "{c:>CELL_WIDTH$}");
    }
    out.push('\n');
}

fn footnotes(out: &mut String, reports: &[&EfficiencyReport]) {
    if reports.iter().any(|r| r.unreliable.iter().any(|&u| u)) {
        out.push_str("! not identified: estimate unreliable, variance infinite along a flat direction\n");
    }
    for r in reports {
        if !r.converged {
            let _ = writeln!(out, "warning: {} did not converge", r.method);
        }
    }
}

/// One method as a coefficient table.
pub fn render_report(r: &EfficiencyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", r.method);
    row(&mut out, "", &["Coef".into(), "SE".into()]);
    for (i, label) in r.labels.iter().enumerate() {
        row(&mut out, label, &[coef_cell(r, i), se_cell(r, i)]);
    }
    row(&mut out, "log-likelihood", &[number(r.loglik)]);
    row(&mut out, "iterations", &[r.iterations.to_string()]);
    row(&mut out, "runtime (ms)", &[format!("{:.3}", r.runtime_ms)]);
    let cond = r.cond_number.map_or("inf".into(), |c| format!("{c:.3e}"));
    row(&mut out, "condition", &[cond]);
    footnotes(&mut out, &[r]);
    out
}

/// All methods side by side, followed by efficiencies relative to the MLE.
pub fn render_comparison(c: &ComparisonReport) -> String {
    let mut out = String::new();
    let mut header = Vec::new();
    let mut sub = Vec::new();
    for r in &c.reports {
        header.push(String::new());
        header.push(r.method.clone());
        sub.push("Coef".to_string());
        sub.push("SE".to_string());
    }
    out.push_str("Model fitting results\n");
    row(&mut out, "", &header);
    row(&mut out, "", &sub);
    let labels = c.reports.first().map(|r| r.labels.clone()).unwrap_or_default();
    for (i, label) in labels.iter().enumerate() {
        let cells: Vec<String> = c.reports.iter().flat_map(|r| [coef_cell(r, i), se_cell(r, i)]).collect();
        row(&mut out, label, &cells);
    }
    let runtime: Vec<String> = c
        .reports
        .iter()
        .flat_map(|r| [String::new(), format!("{:.3}", r.runtime_ms)])
        .collect();
    row(&mut out, "runtime (ms)", &runtime);
    let iters: Vec<String> = c
        .reports
        .iter()
        .flat_map(|r| [String::new(), r.iterations.to_string()])
        .collect();
    row(&mut out, "iterations", &iters);

    let title = match c.definition {
        ReDefinition::VarianceRatio => "variance ratio",
        ReDefinition::SeRatio => "SE ratio",
    };
    let _ = writeln!(out, "\nRelative efficiency with respect to mle ({title})");
    row(&mut out, "", &c.relative.iter().map(|r| r.method.clone()).collect::<Vec<_>>());
    for (i, label) in labels.iter().enumerate() {
        let cells: Vec<String> = c
            .relative
            .iter()
            .map(|r| r.efficiency[i].map_or("--".into(), number))
            .collect();
        row(&mut out, label, &cells);
    }
    let ratios: Vec<String> = c.relative.iter().map(|r| format!("{:.4}", r.runtime_ratio)).collect();
    row(&mut out, "runtime ratio", &ratios);
    footnotes(&mut out, &c.reports.iter().collect::<Vec<_>>());
    out
}
