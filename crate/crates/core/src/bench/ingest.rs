//! Labelled CSV input and two-sample t-statistic screening.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, ParseIssue, Result};
use crate::types::LabeledDataset;

/// A dataset read from CSV with its column bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub data: LabeledDataset,
    /// Names of the retained feature columns, in order.
    pub feature_names: Vec<String>,
    /// Original label values; class `k` is `label_names[k - 1]`.
    pub label_names: Vec<String>,
    /// Indices (among all feature columns) kept by screening.
    pub kept_columns: Vec<usize>,
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            row,
            col: 0,
            issue: ParseIssue::FieldCount {
                expected: expected_len as usize,
                got: len as usize,
            },
        },
        other => Error::Parse {
            row,
            col: 0,
            issue: ParseIssue::Malformed(format!("{other:?}")),
        },
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        col,
        issue: ParseIssue::NonNumeric(cell.to_string()),
    })
}

/// Read a CSV with a header row. The label column is located by name and
/// every other column must be numeric. Distinct labels are sorted
/// (numerically when they all parse as numbers) and mapped to `1..=K`.
///
/// Rows in errors are file line numbers (the header is row 1) and columns
/// are 1-based.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    screen_top_k: Option<usize>,
) -> Result<CsvDataset> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let label_at = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_at)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(e, row))?;
        for (j, cell) in record.iter().enumerate() {
            if j == label_at {
                raw_labels.push(cell.trim().to_string());
            } else {
                values.push(parse_cell(cell, row, j + 1)?);
            }
        }
    }
    let n = raw_labels.len();
    let p = feature_names.len();
    if n == 0 {
        return Err(Error::Parse {
            row: 2,
            col: 0,
            issue: ParseIssue::Malformed("no data rows".into()),
        });
    }

    let mut label_names = raw_labels.clone();
    label_names.sort();
    label_names.dedup();
    let numeric: Option<Vec<f64>> = label_names.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(label_names).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        label_names = pairs.into_iter().map(|(_, s)| s).collect();
    }
    let labels = raw_labels
        .iter()
        .map(|l| label_names.iter().position(|x| x == l).unwrap() + 1)
        .collect();

    let features = DMatrix::from_row_slice(n, p, &values);
    let data = LabeledDataset::new(features, labels)?;
    let mut out = CsvDataset {
        data,
        feature_names,
        label_names,
        kept_columns: (0..p).collect(),
    };
    if let Some(k) = screen_top_k {
        let keep = screen_features(&out.data, k)?;
        out.data = out.data.select_columns(&keep);
        out.feature_names = keep.iter().map(|&j| out.feature_names[j].clone()).collect();
        out.kept_columns = keep;
    }
    Ok(out)
}

/// Read the named columns of a headed CSV as a matrix, in the given order.
pub fn read_features(path: impl AsRef<Path>, columns: &[String]) -> Result<DMatrix<f64>> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let at: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h.trim() == c).ok_or_else(|| Error::Parse {
                row: 1,
                col: 0,
                issue: ParseIssue::Malformed(format!("column {c:?} not found")),
            })
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, i + 2))?;
        for &j in &at {
            values.push(parse_cell(&record[j], i + 2, j + 1)?);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, at.len(), &values))
}

/// Welch two-sample statistics `(m1 - m2) / sqrt(v1/n1 + v2/n2)` per column.
/// A column with zero variance in both classes scores 0 when the means
/// agree and `+inf` otherwise.
pub fn welch_t_statistics(data: &LabeledDataset) -> Result<Vec<f64>> {
    if data.num_classes() != 2 {
        return Err(Error::InvalidParameter(format!(
            "screening needs exactly two classes, found {}",
            data.num_classes()
        )));
    }
    let x1 = data.class_matrix(1);
    let x2 = data.class_matrix(2);
    for (class, x) in [(1, &x1), (2, &x2)] {
        if x.nrows() < 2 {
            return Err(Error::TooFewSamples {
                class,
                n_k: x.nrows(),
                required: 2,
            });
        }
    }
    let moments = |x: &DMatrix<f64>, j: usize| {
        let col = x.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    Ok((0..data.p())
        .map(|j| {
            let (m1, s1) = moments(&x1, j);
            let (m2, s2) = moments(&x2, j);
            let diff = m1 - m2;
            let se = (s1 + s2).sqrt();
            if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

/// Columns with the `k` largest `|t|` (ties to the lower index), returned in
/// their original order.
pub fn screen_features(data: &LabeledDataset, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter("screening must keep at least one feature".into()));
    }
    let t = welch_t_statistics(data)?;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}
