//! Append-only record files: a header line, then one JSON-encoded
//! [`TrialRecord`] per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_record, TrialRecord, Violation};
use crate::orchestrator::check_isolation;

pub const SCHEMA_NAME: &str = "tom-harness.records";
pub const SCHEMA_VERSION: u32 = 1;
/// File name of the record file inside a run directory.
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: schema {found_schema:?} version {found_version}, expected {SCHEMA_NAME:?} version {SCHEMA_VERSION}")]
    SchemaMismatch {
        path: PathBuf,
        found_schema: String,
        found_version: u32,
    },
    #[error("{path}: existing file has config hash {found}, this run has {expected}")]
    ConfigMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{path}:{line}: {message}")]
    Decode {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing header line")]
    MissingHeader { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub schema: String,
    pub schema_version: u32,
    pub config_hash: String,
}

impl FileHeader {
    pub fn current(config_hash: &str) -> FileHeader {
        FileHeader {
            schema: SCHEMA_NAME.to_string(),
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
        }
    }

    fn check(&self, path: &Path) -> Result<(), StoreError> {
        if self.schema != SCHEMA_NAME || self.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaMismatch {
                path: path.to_path_buf(),
                found_schema: self.schema.clone(),
                found_version: self.schema_version,
            });
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Resolves a run directory or a record file path to the record file.
pub fn records_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(RECORDS_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_header(path: &Path, line: &str) -> Result<FileHeader, StoreError> {
    let header: FileHeader = serde_json::from_str(line).map_err(|e| StoreError::Decode {
        path: path.to_path_buf(),
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    header.check(path)?;
    Ok(header)
}

/// The single writer of a record file.
#[derive(Debug)]
pub struct RecordWriter {
    path: PathBuf,
    file: File,
}

impl RecordWriter {
    /// Creates the file with a header, or reopens an existing file for
    /// appending after checking its header.
    pub fn open(path: &Path, config_hash: &str) -> Result<RecordWriter, StoreError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        if exists {
            let file = File::open(path).map_err(io_err(path))?;
            let mut first = String::new();
            BufReader::new(file).read_line(&mut first).map_err(io_err(path))?;
            let header = read_header(path, first.trim_end())?;
            if header.config_hash != config_hash {
                return Err(StoreError::ConfigMismatch {
                    path: path.to_path_buf(),
                    found: header.config_hash,
                    expected: config_hash.to_string(),
                });
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if !exists {
            let line = serde_json::to_string(&FileHeader::current(config_hash)).expect("header serializes");
            writeln!(file, "{line}").map_err(io_err(path))?;
            file.sync_data().map_err(io_err(path))?;
        }
        Ok(RecordWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Writes one line and syncs it to disk before returning.
    pub fn append(&mut self, record: &TrialRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads a whole record file. Any undecodable line is an error.
pub fn read_records(path: &Path) -> Result<(FileHeader, Vec<TrialRecord>), StoreError> {
    let path = &records_path(path);
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| StoreError::MissingHeader { path: path.clone() })?
        .map_err(io_err(path))?;
    let header = read_header(path, &first)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Decode {
            path: path.clone(),
            line: i + 2,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineReport {
    pub line: usize,
    pub trial_id: Option<String>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub path: PathBuf,
    pub header: Option<FileHeader>,
    pub records: usize,
    pub complete: usize,
    pub problems: Vec<LineReport>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.header.is_some() && self.problems.is_empty()
    }
}

/// Integrity check of a record file: header, decoding, record invariants,
/// isolation, config hash agreement and unique trial ids. Problems are
/// collected rather than stopping at the first.
pub fn validate_file(path: &Path) -> Result<ValidationReport, StoreError> {
    let path = records_path(path);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut lines = BufReader::new(file).lines();
    let mut report = ValidationReport {
        path: path.clone(),
        header: None,
        records: 0,
        complete: 0,
        problems: Vec::new(),
    };
    let Some(first) = lines.next() else {
        report.problems.push(LineReport {
            line: 1,
            trial_id: None,
            violations: vec![Violation::new("header", "file is empty")],
        });
        return Ok(report);
    };
    match read_header(&path, &first.map_err(io_err(&path))?) {
        Ok(h) => report.header = Some(h),
        Err(e @ StoreError::SchemaMismatch { .. }) => return Err(e),
        Err(e) => report.problems.push(LineReport {
            line: 1,
            trial_id: None,
            violations: vec![Violation::new("header", e.to_string())],
        }),
    }
    let mut ids = std::collections::BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.problems.push(LineReport {
                    line: line_no,
                    trial_id: None,
                    violations: vec![Violation::new("line", format!("does not decode: {e}"))],
                });
                continue;
            }
        };
        report.records += 1;
        if record.is_complete() {
            report.complete += 1;
        }
        let mut violations = validate_record(&record);
        violations.extend(check_isolation(&record));
        if let Some(h) = &report.header {
            if record.config_hash != h.config_hash {
                violations.push(Violation::new("config_hash", "differs from the file header"));
            }
        }
        if !ids.insert(record.trial_id.clone()) {
            violations.push(Violation::new("trial_id", "duplicate trial id"));
        }
        if !violations.is_empty() {
            report.problems.push(LineReport {
                line: line_no,
                trial_id: Some(record.trial_id),
                violations,
            });
        }
    }
    Ok(report)
}

/// Writes a pretty-printed JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}
