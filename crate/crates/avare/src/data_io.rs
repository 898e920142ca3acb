//! Dataset ingestion and result serialization.
//!
//! Input side: the LIBSVM sparse text format (`label idx:val idx:val ...`,
//! 1-based strictly increasing indices) and dense numeric CSV (first column
//! label, remaining columns features). Both parsers are total: every input
//! either yields a `Dataset` or a diagnostic carrying the line and column of
//! the first offending token. Labels may be arbitrary finite reals; the
//! distinct values are sorted and remapped to classes `0..K`.
//!
//! Output side: per-step trace CSV with a fixed column order
//! (`t,alpha,eps,cost,opt_cost,cum_regret,subopt,rel_err,dx_norm`) and
//! summary JSON. Floats are written with Rust's shortest round-trip
//! formatting, so reading a trace back reproduces every value bit for bit;
//! absent optional columns are empty fields. Writers are deterministic:
//! identical records produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::StepRow;
use crate::problems::{Dataset, ProblemError};

/// Trace and summary files carry this version so readers can reject
/// incompatible layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Highest feature index the LIBSVM parser accepts by default.
pub const DEFAULT_MAX_DIM: usize = 1 << 20;

pub const TRACE_COLUMNS: [&str; 9] = [
    "t",
    "alpha",
    "eps",
    "cost",
    "opt_cost",
    "cum_regret",
    "subopt",
    "rel_err",
    "dx_norm",
];

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("input contains no examples")]
    Empty,
    #[error(transparent)]
    Dataset(#[from] ProblemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> DataIoError {
    DataIoError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

/// Map arbitrary finite real labels to classes `0..K` by sorted order of
/// the distinct values (so `{-1, +1}` becomes `{0, 1}`).
fn remap_labels(raw: &[f64]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<f64> = raw.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
    distinct.dedup();
    let labels = raw
        .iter()
        .map(|v| distinct.partition_point(|d| d < v))
        .collect();
    (labels, distinct.len())
}

/// Parse LIBSVM sparse text into a dense dataset. The feature dimension is
/// the largest index seen; indices above `max_dim` are rejected. Blank
/// lines are skipped.
pub fn parse_libsvm(text: &str, max_dim: usize) -> Result<Dataset, DataIoError> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = 0usize;

    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-blank line has a first token");
        let col_of = |token: &str| line.find(token).unwrap_or(0) + 1;
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, 1, format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(parse_err(line_no, 1, format!("label `{label_tok}` is not finite")));
        }

        let mut pairs: Vec<(usize, f64)> = Vec::new();
        let mut prev_index = 0usize;
        for token in tokens {
            let col = col_of(token);
            let (idx_str, val_str) = token
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, col, format!("expected idx:val, got `{token}`")))?;
            let index: usize = idx_str
                .parse()
                .map_err(|_| parse_err(line_no, col, format!("bad feature index `{idx_str}`")))?;
            if index == 0 {
                return Err(parse_err(line_no, col, "feature indices are 1-based"));
            }
            if index <= prev_index {
                return Err(parse_err(
                    line_no,
                    col,
                    format!("feature index {index} not strictly increasing (previous {prev_index})"),
                ));
            }
            if index > max_dim {
                return Err(parse_err(
                    line_no,
                    col,
                    format!("feature index {index} exceeds the cap {max_dim}"),
                ));
            }
            let value: f64 = val_str
                .parse()
                .map_err(|_| parse_err(line_no, col, format!("bad feature value `{val_str}`")))?;
            if !value.is_finite() {
                return Err(parse_err(line_no, col, format!("feature value `{val_str}` is not finite")));
            }
            prev_index = index;
            width = width.max(index);
            pairs.push((index, value));
        }
        raw_labels.push(label);
        rows.push(pairs);
    }

    if rows.is_empty() {
        return Err(DataIoError::Empty);
    }
    let width = width.max(1);
    let features = rows
        .into_iter()
        .map(|pairs| {
            let mut row = vec![0.0; width];
            for (index, value) in pairs {
                row[index - 1] = value;
            }
            row
        })
        .collect();
    let (labels, classes) = remap_labels(&raw_labels);
    Ok(Dataset::new(features, labels, classes)?)
}

/// Canonical LIBSVM form of a dataset: remapped integer labels and only the
/// nonzero features, indices ascending. `parse_libsvm` of the output
/// reproduces the dataset (up to trailing all-zero columns, which the
/// sparse format cannot express).
pub fn write_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, label) in data.rows() {
        write!(out, "{label}").unwrap();
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Parse dense numeric CSV: first column is the label, the rest are
/// features; every row must have the same number of fields. Set
/// `has_header` when the first line is column names.
pub fn parse_csv_dataset(text: &str, has_header: bool) -> Result<Dataset, DataIoError> {
    let mut raw_labels = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut expected_fields = None;

    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() || (has_header && line_no == 1) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(parse_err(line_no, 1, "need a label and at least one feature"));
        }
        match expected_fields {
            None => expected_fields = Some(fields.len()),
            Some(k) if k != fields.len() => {
                return Err(parse_err(
                    line_no,
                    fields.len(),
                    format!("row has {} fields, expected {k}", fields.len()),
                ));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (col0, field) in fields.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_err(line_no, col0 + 1, format!("bad number `{}`", field.trim()))
            })?;
            if !value.is_finite() {
                return Err(parse_err(line_no, col0 + 1, format!("`{}` is not finite", field.trim())));
            }
            if col0 == 0 {
                raw_labels.push(value);
            } else {
                row.push(value);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(DataIoError::Empty);
    }
    let (labels, classes) = remap_labels(&raw_labels);
    Ok(Dataset::new(features, labels, classes)?)
}

/// Feature preprocessing applied after parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    None,
    /// Per-feature zero mean, unit variance.
    Standardize,
    /// Per-row unit Euclidean norm.
    RowUnit,
}

pub fn normalize_features(data: &mut Dataset, mode: NormalizeMode) {
    match mode {
        NormalizeMode::None => {}
        NormalizeMode::Standardize => data.standardize(),
        NormalizeMode::RowUnit => data.normalize_rows(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write per-step rows as CSV with the fixed `TRACE_COLUMNS` order. Floats
/// use shortest round-trip formatting; absent options are empty fields.
pub fn write_trace_csv(path: &Path, steps: &[StepRow]) -> Result<(), DataIoError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(TRACE_COLUMNS)?;
    for row in steps {
        writer.write_record([
            row.t.to_string(),
            row.alpha.to_string(),
            fmt_opt(row.eps),
            fmt_opt(row.cost),
            fmt_opt(row.opt_cost),
            fmt_opt(row.cum_regret),
            fmt_opt(row.subopt),
            fmt_opt(row.rel_err),
            row.dx_norm.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn field_opt(field: &str, line: usize, col: usize) -> Result<Option<f64>, DataIoError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| parse_err(line, col, format!("bad number `{field}`")))
}

/// Read a trace written by `write_trace_csv`. Sampled indices are not part
/// of the file format, so the returned rows carry none.
pub fn read_trace_csv(path: &Path) -> Result<Vec<StepRow>, DataIoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for (line0, record) in reader.records().enumerate() {
        let line = line0 + 1;
        let record = record?;
        if line == 1 {
            if record.iter().ne(TRACE_COLUMNS) {
                return Err(parse_err(1, 1, "unrecognized trace header"));
            }
            continue;
        }
        if record.len() != TRACE_COLUMNS.len() {
            return Err(parse_err(
                line,
                record.len(),
                format!("row has {} fields, expected {}", record.len(), TRACE_COLUMNS.len()),
            ));
        }
        let req = |field: &str, col: usize| -> Result<f64, DataIoError> {
            field
                .parse()
                .map_err(|_| parse_err(line, col, format!("bad number `{field}`")))
        };
        rows.push(StepRow {
            t: record[0]
                .parse()
                .map_err(|_| parse_err(line, 1, format!("bad step counter `{}`", &record[0])))?,
            alpha: req(&record[1], 2)?,
            eps: field_opt(&record[2], line, 3)?,
            cost: field_opt(&record[3], line, 4)?,
            opt_cost: field_opt(&record[4], line, 5)?,
            cum_regret: field_opt(&record[5], line, 6)?,
            subopt: field_opt(&record[6], line, 7)?,
            rel_err: field_opt(&record[7], line, 8)?,
            indices: Vec::new(),
            dx_norm: req(&record[8], 9)?,
        });
    }
    Ok(rows)
}

/// Serialize a summary value as pretty JSON with a trailing newline.
/// Deterministic: serde emits struct fields in declaration order.
pub fn write_summary_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataIoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_summary_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataIoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
