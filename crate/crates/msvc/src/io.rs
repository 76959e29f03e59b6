//! Delimited tables in and out.
//!
//! Numbers are written with `{:.16e}` (17 significant digits), which
//! round-trips every finite `f64` exactly.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use msvc_core::{CoordinateSet, SpatialDataset};
use nalgebra::{DMatrix, DVector};

/// Name given to the constant column prepended to every design.
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{column}`, row {row}: `{value}` is not a finite number")]
    NotNumeric { column: String, row: usize, value: String },
    #[error("{rows} data rows; need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("column `{0}` listed as varying but not among the covariates")]
    UnknownSvcColumn(String),
    #[error("{0}")]
    Invalid(String),
}

/// A header row plus numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn float(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, InputError> {
        let csv_err = |source| InputError::Csv { path: path.to_owned(), source };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let rows = reader.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
        Ok(Table { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize, InputError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| InputError::MissingColumn(name.to_owned()))
    }

    /// Parses one column; rows are numbered from 1 below the header.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, InputError> {
        let at = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let raw = rec.get(at).unwrap_or("");
                float(raw).ok_or_else(|| InputError::NotNumeric { column: name.to_owned(), row: i + 1, value: raw.to_owned() })
            })
            .collect()
    }

    pub fn matrix(&self, names: &[&str]) -> Result<DMatrix<f64>, InputError> {
        let cols = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(self.len(), names.len(), |r, c| cols[c][r]))
    }
}

/// Which columns of an input table make up a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub coords: [String; 2],
    pub y: String,
    pub x: Vec<String>,
    /// Covariates with varying coefficients; every one of `x` when unset.
    /// The intercept always varies.
    pub svc: Option<Vec<String>>,
}

impl Columns {
    /// Names of the `K` design columns, intercept first.
    pub fn covariate_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_owned()).chain(self.x.iter().cloned()).collect()
    }

    pub fn svc_flags(&self) -> Result<Vec<bool>, InputError> {
        let Some(svc) = &self.svc else {
            return Ok(vec![true; self.x.len() + 1]);
        };
        if let Some(bad) = svc.iter().find(|s| !self.x.contains(s) && s.as_str() != INTERCEPT) {
            return Err(InputError::UnknownSvcColumn(bad.clone()));
        }
        Ok(std::iter::once(true).chain(self.x.iter().map(|c| svc.contains(c))).collect())
    }
}

pub fn coordinates(table: &Table, names: &[String; 2]) -> Result<CoordinateSet, InputError> {
    let px = table.column(&names[0])?;
    let py = table.column(&names[1])?;
    CoordinateSet::from_columns(&px, &py).map_err(|e| InputError::Invalid(e.to_string()))
}

/// Reads the dataset `y ~ 1 + x`, checking that there are at least `K + 2`
/// rows.
pub fn load_dataset(table: &Table, cols: &Columns) -> Result<SpatialDataset, InputError> {
    let coords = coordinates(table, &cols.coords)?;
    let y = DVector::from_vec(table.column(&cols.y)?);
    let names: Vec<&str> = cols.x.iter().map(String::as_str).collect();
    let covariates = table.matrix(&names)?;
    let k = names.len() + 1;
    if table.len() < k + 2 {
        return Err(InputError::TooFewRows { rows: table.len(), needed: k + 2 });
    }
    let mut x = DMatrix::from_element(table.len(), k, 1.0);
    x.columns_mut(1, k - 1).copy_from(&covariates);
    SpatialDataset::new(coords, x, y, cols.svc_flags()?).map_err(|e| InputError::Invalid(e.to_string()))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header and one row per matrix row.
pub fn write_matrix(path: &Path, headers: &[String], m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{}", headers.join(","))?;
    for r in 0..m.nrows() {
        let line: Vec<String> = m.row(r).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()
}

/// Coordinates followed by one column per surface.
pub fn write_surfaces(path: &Path, coord_names: &[String; 2], coords: &CoordinateSet, names: &[String], beta: &DMatrix<f64>) -> std::io::Result<()> {
    let n = coords.len();
    let mut m = DMatrix::zeros(n, 2 + beta.ncols());
    for (i, p) in coords.points().iter().enumerate() {
        m[(i, 0)] = p[0];
        m[(i, 1)] = p[1];
    }
    m.columns_mut(2, beta.ncols()).copy_from(beta);
    let headers: Vec<String> = coord_names.iter().cloned().chain(names.iter().map(|n| format!("beta_{n}"))).collect();
    write_matrix(path, &headers, &m)
}

/// `PREFIX` + `suffix`, keeping any directory part of the prefix.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
