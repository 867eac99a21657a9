//! Delimited-text table reading and writing.
//!
//! All pipeline file formats are comma-separated UTF-8 text with a mandatory
//! header row and `.` as the decimal separator. Values never contain commas
//! or quotes, so no quoting layer is needed; a hand-rolled reader keeps error
//! messages precise (file and line of the offending record).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DELIMITER: char = ',';

/// An in-memory delimited table with provenance for error reporting.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    /// Rows of raw fields, with their 1-based line number in the source file.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Table> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) if !line.trim().is_empty() => {
                line.split(DELIMITER).map(|s| s.trim().to_string()).collect()
            }
            _ => return Err(Error::parse(path, 1, "missing header row")),
        };
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(DELIMITER).map(|s| s.trim().to_string()).collect();
            rows.push((idx + 1, fields));
        }
        Ok(Table {
            path: path.to_string(),
            header,
            rows,
        })
    }

    /// Index of a required column, by exact header name.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(&self.path, 1, format!("missing required column '{name}'")))
    }

    /// Require the header to be exactly `names`, in order.
    pub fn expect_header(&self, names: &[&str]) -> Result<()> {
        if self.header != names {
            return Err(Error::parse(
                &self.path,
                1,
                format!("expected header '{}', found '{}'", names.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    /// Parse one field of one row, reporting the file and line on failure.
    pub fn field<T: FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let (line, fields) = &self.rows[row];
        let raw = fields.get(col).ok_or_else(|| {
            Error::parse(&self.path, *line, format!("row has {} field(s), expected more", fields.len()))
        })?;
        raw.parse::<T>().map_err(|_| {
            Error::parse(
                &self.path,
                *line,
                format!("cannot parse '{}' in column '{}'", raw, self.header.get(col).map(String::as_str).unwrap_or("?")),
            )
        })
    }

    pub fn scalar_field<F: Real>(&self, row: usize, col: usize) -> Result<F> {
        let v: f64 = self.field(row, col)?;
        Ok(F::c(v))
    }
}

/// Render a scalar for file output: shortest representation that parses back
/// to the same value, so persisted intermediates round-trip bitwise.
pub fn fmt_scalar<F: Real>(v: F) -> String {
    format!("{}", v.as_f64())
}

/// Write a delimited table; rows are already-rendered field vectors.
pub fn write_table<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let _ = writeln!(out, "{}", row.join(","));
    }
    write_text(path, &out)
}

/// Write a text file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_field_access() {
        let t = Table::parse("mem.csv", "a,b\n1,2.5\n3,nope\n").unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.column("b").unwrap(), 1);
        let v: f64 = t.field(0, 1).unwrap();
        assert_eq!(v, 2.5);
        let err = t.field::<f64>(1, 1).unwrap_err();
        assert!(err.to_string().contains("mem.csv:3"), "{err}");
    }

    #[test]
    fn missing_header_is_a_parse_error() {
        assert!(Table::parse("x", "").is_err());
    }

    #[test]
    fn scalar_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 123456.789012345, 1e-12] {
            let s = fmt_scalar(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
