//! Cohort CSV ingestion and export.
//!
//! Columns: `id` (required), `survival_time` and `censored` (optional), and
//! any number of real feature columns in header order. Features are
//! standardized per column on ingestion; constant columns are dropped and
//! listed in [`CsvCohort::dropped_columns`].

use std::path::Path;

use ndarray::Array2;

use crate::cohort::Cohort;
use crate::error::{Result, SosmError};

#[derive(Debug, Clone, PartialEq)]
pub struct CsvCohort {
    pub cohort: Cohort,
    pub feature_names: Vec<String>,
    pub dropped_columns: Vec<String>,
}

fn parse_err(path: &Path, message: impl Into<String>) -> SosmError {
    SosmError::Parse { path: path.to_path_buf(), message: message.into() }
}

pub fn parse_cohort_csv(path: &Path) -> Result<CsvCohort> {
    let text = std::fs::read_to_string(path).map_err(|e| SosmError::io(path, e))?;
    parse_cohort_str(&text, path)
}

/// Parses CSV text; `path` is only used for error messages.
pub fn parse_cohort_str(text: &str, path: &Path) -> Result<CsvCohort> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, format!("bad header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| parse_err(path, "missing id column"))?;
    let surv_col = col("survival_time");
    let cens_col = col("censored");
    let feat_cols: Vec<usize> =
        (0..header.len()).filter(|&c| c != id_col && Some(c) != surv_col && Some(c) != cens_col).collect();

    let mut ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut survival = Vec::new();
    let mut censored = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        let number = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, format!("row {row}, column {}: '{cell}' is not a number", header[c])))
        };
        let id = record.get(id_col).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, format!("row {row}: duplicate id '{id}'")));
        }
        ids.push(id);
        if let Some(c) = surv_col {
            survival.push(number(c)?);
        }
        if let Some(c) = cens_col {
            censored.push(match record.get(c).unwrap_or("") {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(path, format!("row {row}, column censored: '{other}' is not 0 or 1")))
                }
            });
        }
        for &c in &feat_cols {
            raw.push(number(c)?);
        }
    }
    let n = ids.len();
    if n < 2 {
        return Err(parse_err(path, format!("need at least 2 samples, found {n}")));
    }

    let d = feat_cols.len();
    let mut kept = Vec::new();
    let mut dropped_columns = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (k, &c) in feat_cols.iter().enumerate() {
        let values: Vec<f64> = (0..n).map(|i| raw[i * d + k]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            dropped_columns.push(header[c].clone());
            continue;
        }
        kept.push(header[c].clone());
        columns.push(values.iter().map(|v| (v - mean) / sd).collect());
    }
    if columns.is_empty() {
        return Err(parse_err(path, "no non-constant feature columns"));
    }
    let features = Array2::from_shape_fn((n, columns.len()), |(i, k)| columns[k][i]);
    let cohort = Cohort::new(
        ids,
        features,
        surv_col.map(|_| survival),
        cens_col.map(|_| censored),
    )
    .map_err(|e| parse_err(path, e.to_string()))?;
    Ok(CsvCohort { cohort, feature_names: kept, dropped_columns })
}

/// Writes `id`, optional `survival_time` / `censored`, then `f0`, `f1`, ...
/// using shortest round-trip real formatting.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["id".to_string()];
    if cohort.survival().is_some() {
        header.push("survival_time".into());
    }
    if cohort.censored().is_some() {
        header.push("censored".into());
    }
    header.extend((0..cohort.dim()).map(|c| format!("f{c}")));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for i in 0..cohort.len() {
        let mut rec = vec![cohort.ids()[i].clone()];
        if let Some(t) = cohort.survival() {
            rec.push(t[i].to_string());
        }
        if let Some(c) = cohort.censored() {
            rec.push(if c[i] { "1" } else { "0" }.into());
        }
        rec.extend(cohort.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| SosmError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> SosmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SosmError::io(path, io),
        other => SosmError::Serialization(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CsvCohort> {
        parse_cohort_str(text, Path::new("test.csv"))
    }

    #[test]
    fn basic_schema() {
        let c = parse("id,survival_time,f0,f1\na,1.5,0,1\nb,2.0,1,3\nc,0.5,2,2\n").unwrap();
        assert_eq!(c.cohort.len(), 3);
        assert_eq!(c.cohort.dim(), 2);
        assert_eq!(c.cohort.survival().unwrap(), &[1.5, 2.0, 0.5]);
        let col0: Vec<f64> = c.cohort.features().column(0).to_vec();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survival_is_optional() {
        let c = parse("id,f0\na,1\nb,2\n").unwrap();
        assert!(c.cohort.survival().is_none());
        assert!(c.cohort.censored().is_none());
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let e = parse("id,survival_time,f0,f1\na,1,0,1\nb,2,1,abc\n").unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("column f1"), "{e}");
    }

    #[test]
    fn distinct_errors() {
        assert!(parse("name,f0\na,1\nb,2\n").unwrap_err().to_string().contains("missing id"));
        assert!(parse("id,f0\na,1\na,2\n").unwrap_err().to_string().contains("duplicate id"));
        assert!(parse("id,f0\na,1\n").unwrap_err().to_string().contains("at least 2"));
        assert!(parse("id,censored,f0\na,2,1\nb,0,2\n").unwrap_err().to_string().contains("censored"));
    }

    #[test]
    fn constant_columns_dropped() {
        let c = parse("id,f0,k,f1\na,1,5,0\nb,2,5,1\nc,4,5,1\n").unwrap();
        assert_eq!(c.dropped_columns, vec!["k".to_string()]);
        assert_eq!(c.feature_names, vec!["f0".to_string(), "f1".to_string()]);
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let first = parse("id,survival_time,censored,f0,f1\na,1,0,0.3,1\nb,2,1,1.7,3\nc,3,0,2,2\n").unwrap();
        write_cohort_csv(&first.cohort, &path).unwrap();
        let again = parse_cohort_csv(&path).unwrap();
        assert_eq!(again.cohort.ids(), first.cohort.ids());
        assert_eq!(again.cohort.survival(), first.cohort.survival());
        assert_eq!(again.cohort.censored(), first.cohort.censored());
        for (a, b) in again.cohort.features().iter().zip(first.cohort.features().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
