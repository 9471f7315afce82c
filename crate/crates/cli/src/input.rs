use std::path::Path;

use nlfit_core::data::Dataset;

use crate::error::{CliError, CliResult};

/// A parsed CSV file: header names and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn predictor_names(&self) -> &[String] {
        &self.header[..self.header.len() - 1]
    }

    pub fn dataset(&self) -> CliResult<Dataset> {
        let k = self.header.len() - 1;
        let mut x = Vec::with_capacity(self.rows.len() * k);
        let mut y = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            x.extend_from_slice(&row[..k]);
            y.push(row[k]);
        }
        Ok(Dataset::new(x, k, y)?)
    }
}

/// Reads a headed CSV with the response in the last column.
pub fn read_csv(path: &Path) -> CliResult<Dataset> {
    read_table(path)?.dataset()
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_table(&bytes)
}

/// Comma-separated, header first, LF or CRLF line ends. Numbers use `.` as
/// the decimal point whatever the locale.
pub fn parse_table(bytes: &[u8]) -> CliResult<Table> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Io("missing header row".into()));
    }
    if header.len() < 2 {
        return Err(CliError::Io("need at least one predictor column and a response column".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse {
                line,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Parse {
                    line,
                    column: col + 1,
                    message: format!("`{cell}` is not a finite number"),
                }),
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Io("no observations".into()));
    }
    Ok(Table { header, rows })
}
