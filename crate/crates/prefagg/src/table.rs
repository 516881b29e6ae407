//! In-memory CSV tables with a fixed number format.

use std::fs;
use std::io::Write;
use std::path::Path;

/// Formats a number with 17 significant digits, e.g. `7.1099019513592785e-1`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header and its rows, all as text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    /// Column names.
    pub header: Vec<String>,
    /// Data rows, each as long as the header.
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Empty table with the given columns.
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row.
    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV text, header first.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv fields are utf-8"))
    }

    /// Writes the CSV, preceded by `preamble` lines, to `out`.
    pub fn write(&self, preamble: &[String], out: &mut dyn Write) -> std::io::Result<()> {
        for line in preamble {
            writeln!(out, "{line}")?;
        }
        let text = self.to_csv().map_err(std::io::Error::other)?;
        out.write_all(text.as_bytes())
    }

    /// Writes the CSV to a file.
    pub fn write_path(&self, preamble: &[String], path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write(preamble, &mut buf)?;
        fs::write(path, buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.5), "5.0000000000000000e-1");
        let x = 0.1 + 0.2;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_always_present() {
        let t = Table::new(&["a", "b"]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n");
    }
}
