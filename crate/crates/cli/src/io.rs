//! Dataset, loading and model files.
use std::fs::File;
use std::io::Write;
use std::path::Path;

use live_core::numerics::Matrix;
use live_core::types::{validate_dataset, Dataset, Loading};

use crate::error::{CliError, CliResult};

/// Name given to the prepended all-ones column.
pub const INTERCEPT_NAME: &str = "intercept";

/// Fixed 17-significant-digit scientific notation, locale independent.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn open(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line());
    match (e.kind(), line) {
        (csv::ErrorKind::Io(_), _) => CliError::Io(format!("{}: {e}", path.display())),
        (csv::ErrorKind::UnequalLengths { expected_len, len, .. }, Some(line)) => CliError::Validation(format!(
            "{} line {line}: expected {expected_len} fields, found {len}",
            path.display()
        )),
        (_, Some(line)) => CliError::Validation(format!("{} line {line}: {e}", path.display())),
        _ => CliError::Validation(format!("{}: {e}", path.display())),
    }
}

fn parse_field(path: &Path, line: u64, column: &str, raw: &str) -> CliResult<f64> {
    raw.parse::<f64>().map_err(|_| {
        CliError::Validation(format!(
            "{} line {line}, column '{column}': cannot parse '{raw}' as a number",
            path.display()
        ))
    })
}

/// Outcomes, design and column names read from a CSV with a `y` column.
pub struct LoadedDataset {
    pub data: Dataset,
    /// Model column names, including the intercept when added.
    pub columns: Vec<String>,
}

pub fn read_dataset(path: &Path, add_intercept: bool) -> CliResult<LoadedDataset> {
    let mut reader = open(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| CliError::Validation(format!("{}: header has no 'y' column", path.display())))?;
    let mut columns: Vec<String> = Vec::new();
    if add_intercept {
        columns.push(INTERCEPT_NAME.into());
    }
    columns.extend(header.iter().enumerate().filter(|(k, _)| *k != y_col).map(|(_, h)| h.clone()));
    if columns.is_empty() {
        return Err(CliError::Validation(format!("{}: no feature columns", path.display())));
    }
    let mut values = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if add_intercept {
            values.push(1.0);
        }
        for (k, raw) in record.iter().enumerate() {
            let v = parse_field(path, line, &header[k], raw)?;
            if k == y_col {
                if v != 0.0 && v != 1.0 {
                    return Err(CliError::Validation(format!(
                        "{} line {line}: outcome must be 0 or 1, got {raw}",
                        path.display()
                    )));
                }
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = y.len();
    let x = Matrix::from_row_major(n, columns.len(), values)?;
    let data = validate_dataset(x, y, add_intercept)?;
    Ok(LoadedDataset { data, columns })
}

/// One loading per row; the header must name the model columns in order.
pub fn read_loadings(path: &Path, columns: &[String]) -> CliResult<Vec<Loading>> {
    let mut reader = open(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != columns {
        return Err(CliError::Validation(format!(
            "{}: loading header [{}] does not match the model columns [{}]",
            path.display(),
            header.join(","),
            columns.join(",")
        )));
    }
    let mut loadings = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .enumerate()
            .map(|(k, raw)| parse_field(path, line, &header[k], raw))
            .collect::<CliResult<Vec<f64>>>()?;
        let loading = Loading::new(values)
            .map_err(|e| CliError::Validation(format!("{} line {line}: {e}", path.display())))?;
        loadings.push(loading);
    }
    if loadings.is_empty() {
        return Err(CliError::Validation(format!("{}: no loadings", path.display())));
    }
    Ok(loadings)
}

/// Nonzero coefficients as `index,name,value` rows (0-based index).
pub fn write_model(path: &Path, beta: &[f64], columns: &[String]) -> CliResult<()> {
    let mut out = String::from("index,name,value\n");
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            out.push_str(&format!("{j},{},{}\n", columns[j], fmt_num(b)));
        }
    }
    write_file(path, out.as_bytes())
}

/// Dense coefficients of length `p` from a model file.
pub fn read_model(path: &Path, p: usize) -> CliResult<Vec<f64>> {
    let mut reader = open(path)?;
    let mut beta = vec![0.0; p];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |pos| pos.line());
        let bad = |what: &str| CliError::Validation(format!("{} line {line}: {what}", path.display()));
        let index: usize = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad index"))?;
        if index >= p {
            return Err(bad(&format!("index {index} out of range for {p} columns")));
        }
        beta[index] = parse_field(path, line, "value", record.get(2).ok_or_else(|| bad("missing value"))?)?;
    }
    Ok(beta)
}

/// Writes through a temporary file and renames, so readers never see a
/// partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}
