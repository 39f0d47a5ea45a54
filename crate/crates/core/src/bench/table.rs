//! Classification-error tables.

use std::fmt::Write;

use crate::error::{Error, ParseIssue, Result};

/// One (model, p, method) cell: mean and standard deviation of the test
/// error over the successful replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub model: String,
    pub p: usize,
    pub method: String,
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
    /// Replications whose fit failed and were left out of `mean` and `sd`.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn extend(&mut self, other: ErrorTable) {
        self.rows.extend(other.rows);
    }

    pub fn get(&self, model: &str, p: usize, method: &str) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.p == p && r.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidParameter(format!("unknown table format {other:?}"))),
        }
    }
}

const HEADER: &str = "model,p,method,mean,sd,reps,failed";

/// Render a table. CSV numbers use Rust's shortest round-trip form, so
/// [`parse_table`] recovers them exactly; markdown puts methods in rows
/// and (model, p) cells in columns as `mean (sd)`.
pub fn emit_table(table: &ErrorTable, format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(HEADER);
            out.push('\n');
            for r in &table.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.model, r.p, r.method, r.mean, r.sd, r.reps, r.failed
                )
                .unwrap();
            }
        }
        TableFormat::Markdown => {
            let mut columns: Vec<(&str, usize)> = Vec::new();
            let mut methods: Vec<&str> = Vec::new();
            for r in &table.rows {
                if !columns.contains(&(r.model.as_str(), r.p)) {
                    columns.push((&r.model, r.p));
                }
                if !methods.contains(&r.method.as_str()) {
                    methods.push(&r.method);
                }
            }
            out.push_str("| method |");
            for (m, p) in &columns {
                write!(out, " {m} p={p} |").unwrap();
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(columns.len()));
            out.push('\n');
            for method in methods {
                write!(out, "| {method} |").unwrap();
                for &(m, p) in &columns {
                    match table.get(m, p, method) {
                        Some(r) => {
                            write!(out, " {:.3} ({:.3})", r.mean, r.sd).unwrap();
                            if r.failed > 0 {
                                write!(out, " [{} failed]", r.failed).unwrap();
                            }
                            out.push_str(" |");
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Read back the CSV form of [`emit_table`].
pub fn parse_table(text: &str) -> Result<ErrorTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(malformed(1, format!("expected header {HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        let num = |col: usize| -> Result<f64> {
            rec[col].parse().map_err(|_| Error::Parse {
                row,
                col: col + 1,
                issue: ParseIssue::NonNumeric(rec[col].to_string()),
            })
        };
        let count = |col: usize| -> Result<usize> {
            rec[col].parse().map_err(|_| Error::Parse {
                row,
                col: col + 1,
                issue: ParseIssue::NonNumeric(rec[col].to_string()),
            })
        };
        rows.push(ErrorRow {
            model: rec[0].to_string(),
            p: count(1)?,
            method: rec[2].to_string(),
            mean: num(3)?,
            sd: num(4)?,
            reps: count(5)?,
            failed: count(6)?,
        });
    }
    Ok(ErrorTable { rows })
}

fn malformed(row: usize, msg: String) -> Error {
    Error::Parse {
        row,
        col: 0,
        issue: ParseIssue::Malformed(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell() -> ErrorRow {
        ErrorRow {
            model: "model2".into(),
            p: 100,
            method: "sdar".into(),
            mean: 0.141,
            sd: 0.015,
            reps: 100,
            failed: 0,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ErrorTable::default();
        assert_eq!(emit_table(&t, TableFormat::Csv), format!("{HEADER}\n"));
        assert_eq!(emit_table(&t, TableFormat::Markdown), "| method |\n|---|\n");
        assert_eq!(parse_table(&emit_table(&t, TableFormat::Csv)).unwrap(), t);
    }

    #[test]
    fn one_cell_literals() {
        let t = ErrorTable { rows: vec![cell()] };
        let csv = emit_table(&t, TableFormat::Csv);
        assert_eq!(csv.lines().nth(1), Some("model2,100,sdar,0.141,0.015,100,0"));
        let md = emit_table(&t, TableFormat::Markdown);
        assert!(md.contains("| sdar | 0.141 (0.015) |"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut b = cell();
        b.method = "oracle".into();
        b.mean = 1.0 / 3.0;
        b.sd = 0.1 + 0.2;
        b.failed = 2;
        let t = ErrorTable { rows: vec![cell(), b] };
        assert_eq!(parse_table(&emit_table(&t, TableFormat::Csv)).unwrap(), t);
    }
}
