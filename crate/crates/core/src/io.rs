//! CSV ingestion for the long and grouped case-control schemas.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::casecontrol::{grouped_dataset, grouped_labels, GroupedRow};
use crate::data::{MultisampleDataset, Observation};
use crate::error::{Error, Result};

/// Input layouts accepted by [`read_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    /// `sample,y,x1,...,xp`, one row per unit; `y` may be empty.
    Long,
    /// `age,scar,cases,controls`, one row per covariate cell.
    CaseControl,
}

/// Numbering of the `sample` column in the long schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleBase {
    /// `0` is the first sample (controls, in case-control data).
    #[default]
    Zero,
    One,
}

/// A dataset together with its covariate labels.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: MultisampleDataset,
    pub covariates: Vec<String>,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn is_blank(header: &csv::StringRecord) -> bool {
    header.iter().all(|f| f.is_empty())
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(line, e.to_string())
}

fn number(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn count(field: &str, what: &str, line: u64) -> Result<u64> {
    field
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: not a non-negative integer: {field:?}")))
}

/// Reads the long schema. The number of samples is the largest sample index.
pub fn read_long<R: Read>(input: R, base: SampleBase) -> Result<LoadedData> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if is_blank(&header) {
        return Err(Error::NoObservations);
    }
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[0] != "sample" || names[1] != "y" {
        return Err(parse_err(1, format!("expected header `sample,y,x1,...`, found `{}`", names.join(","))));
    }
    let covariates: Vec<String> = names[2..].iter().map(|s| s.to_string()).collect();
    let offset = match base {
        SampleBase::Zero => 1,
        SampleBase::One => 0,
    };
    let mut obs = Vec::new();
    let mut n_samples = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let raw = count(&rec[0], "sample", line)? as usize;
        let sample = raw + offset;
        if sample == 0 {
            return Err(parse_err(line, "sample index 0 with 1-based numbering"));
        }
        let y = match &rec[1] {
            "" | "NA" => None,
            v => Some(number(v, "y", line)?),
        };
        let x = (2..rec.len())
            .map(|j| number(&rec[j], &covariates[j - 2], line))
            .collect::<Result<Vec<_>>>()?;
        n_samples = n_samples.max(sample);
        obs.push(Observation::new(sample, y, x, 1));
    }
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok(LoadedData {
        dataset: MultisampleDataset::new(obs, n_samples)?,
        covariates,
    })
}

/// Reads grouped rows `age,scar,cases,controls`.
pub fn read_grouped_rows<R: Read>(input: R) -> Result<Vec<GroupedRow>> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if is_blank(&header) {
        return Err(Error::NoObservations);
    }
    let names: Vec<&str> = header.iter().collect();
    if names != ["age", "scar", "cases", "controls"] {
        return Err(parse_err(
            1,
            format!("expected header `age,scar,cases,controls`, found `{}`", names.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let age = number(&rec[0], "age", line)?;
        if age <= -7.5 {
            return Err(parse_err(line, format!("age must exceed -7.5, got {age}")));
        }
        rows.push(GroupedRow {
            age,
            scar: number(&rec[1], "scar", line)?,
            cases: count(&rec[2], "cases", line)?,
            controls: count(&rec[3], "controls", line)?,
        });
    }
    if rows.iter().all(|r| r.cases + r.controls == 0) {
        return Err(Error::NoObservations);
    }
    Ok(rows)
}

/// Reads the grouped schema into a two-sample dataset.
pub fn read_grouped<R: Read>(input: R) -> Result<LoadedData> {
    let rows = read_grouped_rows(input)?;
    Ok(LoadedData {
        dataset: grouped_dataset(&rows)?,
        covariates: grouped_labels(),
    })
}

pub fn read_dataset<R: Read>(input: R, schema: Schema) -> Result<LoadedData> {
    match schema {
        Schema::Long => read_long(input, SampleBase::Zero),
        Schema::CaseControl => read_grouped(input),
    }
}

pub fn read_path(path: &std::path::Path, schema: Schema) -> Result<LoadedData> {
    read_dataset(std::fs::File::open(path)?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casecontrol::{leprosy_rows, LEPROSY_CSV};

    #[test]
    fn bundled_csv_matches_embedded_table() {
        let rows = read_grouped_rows(LEPROSY_CSV.as_bytes()).unwrap();
        assert_eq!(rows, leprosy_rows());
    }

    #[test]
    fn long_schema_with_missing_response() {
        let data = "sample,y,x1\n0,,1.5\n1,1,2.0\n0,0,1.5\n";
        let d = read_long(data.as_bytes(), SampleBase::Zero).unwrap();
        assert_eq!(d.dataset.n_samples(), 2);
        assert_eq!(d.dataset.sample_sizes(), &[2, 1]);
        assert_eq!(d.covariates, vec!["x1"]);
        assert_eq!(d.dataset.observations()[0].response, None);
    }

    #[test]
    fn header_only_has_no_observations() {
        let err = read_long("sample,y,x1\n".as_bytes(), SampleBase::Zero).unwrap_err();
        assert_eq!(err.to_string(), "no observations");
        let err = read_long("".as_bytes(), SampleBase::Zero).unwrap_err();
        assert_eq!(err.to_string(), "no observations");
        let err = read_grouped("age,scar,cases,controls\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "no observations");
    }

    #[test]
    fn malformed_value_reports_line() {
        let data = "sample,y,x1\n0,0,1\n1,1,abc\n";
        match read_long(data.as_bytes(), SampleBase::Zero).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("x1"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn one_based_samples() {
        let data = "sample,y,x\n1,,0\n2,,1\n";
        let d = read_long(data.as_bytes(), SampleBase::One).unwrap();
        assert_eq!(d.dataset.sample_sizes(), &[1, 1]);
        assert!(read_long("sample,y,x\n0,,0\n".as_bytes(), SampleBase::One).is_err());
    }

    #[test]
    fn grouped_rejects_bad_age() {
        let data = "age,scar,cases,controls\n-8,0,1,1\n";
        assert!(matches!(read_grouped(data.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn grouped_rejects_wrong_header() {
        assert!(read_grouped("a,b,c,d\n1,0,1,1\n".as_bytes()).is_err());
    }
}
