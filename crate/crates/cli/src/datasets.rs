//! Numeric CSV ingestion.

use std::path::Path;

use degp_core::ndcore::Tensor;

use crate::error::{CliError, CliResult};

/// Inputs `(n, d)` and targets `(n, 1)` from a headed numeric CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub x: Tensor,
    pub y: Tensor,
    pub columns: Vec<String>,
}

pub fn load_regression_csv(path: &Path, target_column: Option<usize>) -> CliResult<Table> {
    let err = |m: String| CliError::Data(path.to_path_buf(), m);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Io(path.to_path_buf(), std::io::Error::other(e.to_string())),
        _ => err(e.to_string()),
    })?;
    let columns: Vec<String> = rdr.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    let width = columns.len();
    if width < 2 {
        return Err(err("need at least one feature and a target".into()));
    }
    let t = target_column.unwrap_or(width - 1);
    if t >= width {
        return Err(err(format!("target column {t} out of range for {width} columns")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| err(format!("row {}: column {j} is not numeric: {field:?}", i + 2)))?;
            if j == t {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(err("no data rows".into()));
    }
    Ok(Table { x: Tensor::matrix(n, width - 1, xs)?, y: Tensor::matrix(n, 1, ys)?, columns })
}

/// Per-column mean and standard deviation (population); zero deviations
/// become 1 so constant columns map to 0.
pub fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    let sd = sd.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

pub fn standardize(x: &Tensor, mean: &[f64], sd: &[f64]) -> Tensor {
    let mut out = x.clone();
    for i in 0..x.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / sd[j];
        }
    }
    out
}
