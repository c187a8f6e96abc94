use std::path::Path;

use crate::{CliError, CliResult, Col};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Z,
    P,
}

/// Reads a one-column CSV whose header names the statistic (`z` or `p`).
pub(crate) fn read_vector(path: &Path) -> CliResult<(Kind, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read input {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    let (col, kind) = headers
        .iter()
        .enumerate()
        .find_map(|(i, h)| match h.to_ascii_lowercase().as_str() {
            "z" => Some((i, Kind::Z)),
            "p" => Some((i, Kind::P)),
            _ => None,
        })
        .ok_or_else(|| CliError::input(format!("{}: expected a column named `z` or `p`", path.display())))?;
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let field = record.get(col).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| {
            CliError::input(format!("{}: row {}: `{field}` is not a number", path.display(), line + 1))
        })?;
        if !v.is_finite() {
            return Err(CliError::input(format!("{}: row {}: value is not finite", path.display(), line + 1)));
        }
        if kind == Kind::P && !(0.0..=1.0).contains(&v) {
            return Err(CliError::input(format!("{}: row {}: p-value {v} outside [0, 1]", path.display(), line + 1)));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::input(format!("{}: no values", path.display())));
    }
    Ok((kind, values))
}

/// Equal-length columns as CSV; booleans are written as 0/1.
pub(crate) fn columns_csv(cols: &[(&str, Col<'_>)]) -> String {
    let len = |c: &Col<'_>| match c {
        Col::F(v) => v.len(),
        Col::B(v) => v.len(),
    };
    let n = cols.first().map_or(0, |(_, c)| len(c));
    debug_assert!(cols.iter().all(|(_, c)| len(c) == n));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cols.iter().map(|(name, _)| *name)).expect("in-memory write");
    for i in 0..n {
        let row = cols.iter().map(|(_, c)| match c {
            Col::F(v) => v[i].to_string(),
            Col::B(v) => u8::from(v[i]).to_string(),
        });
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}
