//! CSV with 17 significant digits and a header row.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{MfgError, Result};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders equal-length columns as CSV text.
pub fn csv_string(headers: &[String], columns: &[&[f64]]) -> Result<String> {
    if headers.len() != columns.len() {
        return Err(MfgError::Domain("one header per column required".into()));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(MfgError::Domain("CSV columns differ in length".into()));
    }
    let mut out = headers.join(",");
    out.push('\n');
    for r in 0..rows {
        for (i, c) in columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{}", format_f64(c[r])).expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, headers: &[String], columns: &[&[f64]]) -> Result<()> {
    std::fs::write(path, csv_string(headers, columns)?)?;
    Ok(())
}

/// Parsed CSV: header names and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn parse_csv(text: &str) -> Result<Table> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let headers: Vec<String> = lines
        .next()
        .ok_or_else(|| MfgError::Domain("empty CSV".into()))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(MfgError::Domain(format!("row {} has {} cells", i + 1, cells.len())));
        }
        for (col, cell) in columns.iter_mut().zip(cells) {
            col.push(
                cell.trim()
                    .parse()
                    .map_err(|_| MfgError::Domain(format!("row {}: '{cell}' is not a number", i + 1)))?,
            );
        }
    }
    Ok(Table { headers, columns })
}

pub fn read_csv(path: &Path) -> Result<Table> {
    parse_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(a in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 1..50)) {
            let b: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
            let text = csv_string(&["a".into(), "b".into()], &[&a, &b]).unwrap();
            let t = parse_csv(&text).unwrap();
            prop_assert_eq!(t.column("a").unwrap(), a.as_slice());
            prop_assert_eq!(t.column("b").unwrap(), b.as_slice());
        }
    }

    #[test]
    fn ragged_input_rejected() {
        assert!(csv_string(&["a".into(), "b".into()], &[&[1.0], &[1.0, 2.0]]).is_err());
        assert!(parse_csv("a,b\n1,2\n3\n").is_err());
    }
}
