//! CSV ingestion with name/index column selectors.

use crate::CliError;
use dream_core::Sample;
use nalgebra::DMatrix;
use std::path::Path;

/// A parsed column selector: comma-separated names, 0-based indices, or
/// inclusive index ranges like `2-5`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSelector {
    tokens: Vec<SelectorToken>,
}

#[derive(Debug, Clone, PartialEq)]
enum SelectorToken {
    Name(String),
    Index(usize),
    Range(usize, usize),
}

impl ColumnSelector {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let mut tokens = Vec::new();
        for raw in spec.split(',') {
            let tok = raw.trim();
            if tok.is_empty() {
                continue;
            }
            if let Ok(ix) = tok.parse::<usize>() {
                tokens.push(SelectorToken::Index(ix));
            } else if let Some((a, b)) = tok.split_once('-') {
                match (a.trim().parse::<usize>(), b.trim().parse::<usize>()) {
                    (Ok(lo), Ok(hi)) if lo <= hi => tokens.push(SelectorToken::Range(lo, hi)),
                    _ => tokens.push(SelectorToken::Name(tok.to_string())),
                }
            } else {
                tokens.push(SelectorToken::Name(tok.to_string()));
            }
        }
        if tokens.is_empty() {
            return Err(CliError::config(format!("empty column selector '{spec}'")));
        }
        Ok(ColumnSelector { tokens })
    }

    /// Resolves the selector against a header row into column indices.
    pub fn resolve(&self, header: &[String]) -> Result<Vec<usize>, CliError> {
        let mut out = Vec::new();
        for tok in &self.tokens {
            match tok {
                SelectorToken::Index(ix) => {
                    if *ix >= header.len() {
                        return Err(CliError::config(format!(
                            "column index {ix} out of range (file has {} columns)",
                            header.len()
                        )));
                    }
                    out.push(*ix);
                }
                SelectorToken::Range(lo, hi) => {
                    if *hi >= header.len() {
                        return Err(CliError::config(format!(
                            "column range {lo}-{hi} out of range (file has {} columns)",
                            header.len()
                        )));
                    }
                    out.extend(*lo..=*hi);
                }
                SelectorToken::Name(name) => {
                    match header.iter().position(|h| h == name) {
                        Some(ix) => out.push(ix),
                        None => {
                            return Err(CliError::config(format!(
                                "column '{name}' not found in header"
                            )))
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Result of CSV ingestion: the sample plus how many incomplete rows were
/// dropped.
#[derive(Debug)]
pub struct Ingested {
    pub sample: Sample,
    pub dropped_rows: usize,
    pub x_columns: Vec<String>,
    pub w_columns: Vec<String>,
    pub y_column: String,
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Reads a delimited file with a header row and extracts `X`, `W`, `Y` by
/// the given selectors. Rows with missing values in any selected column are
/// dropped (counted); any other non-numeric cell is an error naming the
/// offending row and column.
pub fn ingest_csv(
    path: &Path,
    x_sel: &ColumnSelector,
    w_sel: &ColumnSelector,
    y_sel: &ColumnSelector,
) -> Result<Ingested, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let x_ix = x_sel.resolve(&header)?;
    let w_ix = w_sel.resolve(&header)?;
    let y_ix = y_sel.resolve(&header)?;
    if y_ix.len() != 1 {
        return Err(CliError::config("the response selector must pick exactly one column".into()));
    }
    let y_ix = y_ix[0];
    let mut seen = std::collections::HashSet::new();
    for ix in x_ix.iter().chain(w_ix.iter()).chain(std::iter::once(&y_ix)) {
        if !seen.insert(*ix) {
            return Err(CliError::config(format!(
                "column '{}' selected more than once across X/W/Y",
                header[*ix]
            )));
        }
    }

    let mut x_rows: Vec<f64> = Vec::new();
    let mut w_rows: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    for (row_num, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::data(format!("row {}: {e}", row_num + 2)))?;
        let selected: Vec<usize> =
            x_ix.iter().chain(w_ix.iter()).chain(std::iter::once(&y_ix)).copied().collect();
        if selected.iter().any(|&ix| is_missing(record.get(ix).unwrap_or(""))) {
            dropped += 1;
            continue;
        }
        let parse = |ix: usize| -> Result<f64, CliError> {
            let field = record.get(ix).unwrap_or("");
            field.trim().parse::<f64>().map_err(|_| {
                CliError::data(format!(
                    "non-numeric value '{}' at row {}, column '{}'",
                    field,
                    row_num + 2,
                    header[ix]
                ))
            })
        };
        for &ix in &x_ix {
            x_rows.push(parse(ix)?);
        }
        for &ix in &w_ix {
            w_rows.push(parse(ix)?);
        }
        y.push(parse(y_ix)?);
    }

    let n = y.len();
    if n == 0 {
        return Err(CliError::data("no complete rows after dropping missing values".into()));
    }
    let x = DMatrix::from_row_slice(n, x_ix.len(), &x_rows);
    let w = DMatrix::from_row_slice(n, w_ix.len(), &w_rows);
    let sample = Sample::new(x, w, y)
        .map_err(|e| CliError::data(format!("invalid sample: {e}")))?;
    Ok(Ingested {
        sample,
        dropped_rows: dropped,
        x_columns: x_ix.iter().map(|&i| header[i].clone()).collect(),
        w_columns: w_ix.iter().map(|&i| header[i].clone()).collect(),
        y_column: header[y_ix].clone(),
    })
}
