//! Line-delimited JSON files: one header line, then one record per line.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitter::{FitError, FitReport};

pub const DATASET_FORMAT: &str = "handfit-dataset";
pub const REPORTS_FORMAT: &str = "handfit-reports";
pub const THETA_FORMAT: &str = "handfit-theta";
pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("missing header line")]
    MissingHeader,
    #[error("expected a {expected} file, found {found}")]
    Format { expected: String, found: String },
    #[error("unsupported {format} version {version}")]
    Version { format: String, version: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: String,
}

impl Header {
    pub fn new(format: &str) -> Self {
        Header { format: format.into(), version: FORMAT_VERSION.into() }
    }

    fn check(&self, expected: &str) -> Result<(), RecordError> {
        if self.format != expected {
            return Err(RecordError::Format { expected: expected.into(), found: self.format.clone() });
        }
        let major = self.version.split('.').next().and_then(|m| m.parse::<u32>().ok());
        if major != Some(SUPPORTED_MAJOR) {
            return Err(RecordError::Version { format: self.format.clone(), version: self.version.clone() });
        }
        Ok(())
    }
}

/// Why a sample has no fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Bad or insufficient landmarks.
    Data,
    /// Non-finite loss or gradient.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&FitError> for Failure {
    fn from(e: &FitError) -> Self {
        let kind = match e {
            FitError::Observation(_) | FitError::Config(_) => FailureKind::Data,
            _ => FailureKind::Numerical,
        };
        Failure { kind, message: e.to_string() }
    }
}

/// One line of a reports file: a fit or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Box<FitReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl ReportRecord {
    pub fn from_result(source_id: String, result: Result<FitReport, FitError>) -> Self {
        match result {
            Ok(r) => ReportRecord { source_id, report: Some(Box::new(r)), failure: None },
            Err(e) => ReportRecord { source_id, report: None, failure: Some(Failure::from(&e)) },
        }
    }
}

pub fn write_records<T: Serialize>(mut out: impl Write, format: &str, records: &[T]) -> Result<(), RecordError> {
    let json = |source| RecordError::Json { line: 0, source };
    serde_json::to_writer(&mut out, &Header::new(format)).map_err(json)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(json)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<T: DeserializeOwned>(input: impl BufRead, format: &str) -> Result<Vec<T>, RecordError> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (_, first) = lines.next().ok_or(RecordError::MissingHeader)?;
    let header: Header = serde_json::from_str(&first?).map_err(|source| RecordError::Json { line: 1, source })?;
    header.check(format)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        out.push(serde_json::from_str(&line?).map_err(|source| RecordError::Json { line: i + 1, source })?);
    }
    Ok(out)
}
