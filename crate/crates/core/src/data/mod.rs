//! Tabular input: CSV loading, sample filters, and design construction.

mod design;
mod filter;

pub use design::{build_design, validate_absorb_nesting, ModelSpec, NestingReport, PreparedDesign};
pub use filter::{apply_sample_filter, Filter};

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// One named column. Every column keeps its raw text; columns whose values
/// all parse as numbers also carry a numeric view.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    raw: Vec<String>,
    numeric: Option<Vec<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, raw: Vec<String>) -> Self {
        let numeric = raw
            .iter()
            .map(|s| s.trim().parse::<f64>().ok())
            .collect::<Option<Vec<f64>>>();
        Self {
            name: name.into(),
            raw,
            numeric,
        }
    }

    pub fn from_f64(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            raw: values.iter().map(|v| v.to_string()).collect(),
            numeric: Some(values.to_vec()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[String] {
        &self.raw
    }

    pub fn numeric(&self) -> Option<&[f64]> {
        self.numeric.as_deref()
    }

    /// Numeric values, or an error naming the first value that is not a number.
    pub fn require_numeric(&self) -> Result<&[f64]> {
        match &self.numeric {
            Some(v) => Ok(v),
            None => {
                let (row, value) = self
                    .raw
                    .iter()
                    .enumerate()
                    .find(|(_, s)| s.trim().parse::<f64>().is_err())
                    .map(|(i, s)| (i, s.clone()))
                    .unwrap_or_default();
                Err(Error::NonNumeric {
                    column: self.name.clone(),
                    row,
                    value,
                })
            }
        }
    }

    fn select(&self, keep: &[bool]) -> Column {
        let raw: Vec<String> = self
            .raw
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        let numeric = self.numeric.as_ref().map(|v| {
            v.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(x, _)| *x)
                .collect()
        });
        Column {
            name: self.name.clone(),
            raw,
            numeric,
        }
    }
}

/// Columns of equal length plus the number of rows removed by listwise deletion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n: usize,
    dropped: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map(Column::len).unwrap_or(0);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::InvalidSpec(format!(
                "column `{}` has {} rows, expected {n}",
                bad.name,
                bad.len()
            )));
        }
        Ok(Self {
            columns,
            n,
            dropped: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    /// Rows removed because a used column was missing.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub(crate) fn select_rows(&self, keep: &[bool]) -> Dataset {
        let columns: Vec<Column> = self.columns.iter().map(|c| c.select(keep)).collect();
        let n = keep.iter().filter(|&&k| k).count();
        Dataset {
            columns,
            n,
            dropped: self.dropped,
        }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "." | "NA" | "NaN" | "nan")
}

/// Load a CSV file, keeping only `used_columns` and dropping rows where any of
/// them is missing (empty, `.`, `NA`, `NaN`, `nan`).
pub fn load_csv(path: impl AsRef<Path>, used_columns: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_csv_reader(file, used_columns)
}

/// As [`load_csv`], from any reader.
pub fn load_csv_reader<R: Read>(reader: R, used_columns: &[String]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut wanted: Vec<(String, usize)> = Vec::new();
    for name in used_columns {
        if wanted.iter().any(|(n, _)| n == name) {
            continue;
        }
        let idx = *index
            .get(name.as_str())
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        wanted.push((name.clone(), idx));
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); wanted.len()];
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let values: Vec<&str> = wanted
            .iter()
            .map(|(_, i)| record.get(*i).unwrap_or(""))
            .collect();
        if values.iter().any(|v| is_missing(v)) {
            dropped += 1;
            continue;
        }
        for (col, v) in raw.iter_mut().zip(values) {
            col.push(v.to_string());
        }
    }

    let columns = wanted
        .into_iter()
        .zip(raw)
        .map(|((name, _), values)| Column::new(name, values))
        .collect();
    let mut data = Dataset::new(columns)?;
    data.dropped = dropped;
    if data.n == 0 {
        return Err(Error::EmptyData);
    }
    Ok(data)
}
