//! Matrix Market reading and writing for sparse operators and dense factors.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use nalgebra_sparse::io::{load_coo_from_matrix_market_file, load_coo_from_matrix_market_str, save_to_matrix_market_file};
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};
use crate::linalg::Csc;

pub fn write_sparse(path: impl AsRef<Path>, a: &Csc) -> Result<()> {
    save_to_matrix_market_file(a, path)?;
    Ok(())
}

pub fn read_sparse(path: impl AsRef<Path>) -> Result<Csc> {
    let coo = load_coo_from_matrix_market_file::<f64, _>(path.as_ref())
        .map_err(|e| Error::Parse(format!("{}: {}", path.as_ref().display(), e)))?;
    Ok(CscMatrix::from(&coo))
}

/// Dense `array` format, column major, round-trip exact.
pub fn dense_to_string(x: &DMatrix<f64>) -> String {
    let mut s = String::with_capacity(24 * x.len() + 64);
    s.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", x.nrows(), x.ncols());
    for v in x.iter() {
        let _ = writeln!(s, "{v:e}");
    }
    s
}

pub fn write_dense(path: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, dense_to_string(x))?;
    Ok(())
}

pub fn dense_from_str(data: &str) -> Result<DMatrix<f64>> {
    let coo = load_coo_from_matrix_market_str::<f64>(data).map_err(|e| Error::Parse(e.to_string()))?;
    let mut d = DMatrix::zeros(coo.nrows(), coo.ncols());
    for (i, j, v) in coo.triplet_iter() {
        d[(i, j)] += *v;
    }
    Ok(d)
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let data = std::fs::read_to_string(path.as_ref())?;
    dense_from_str(&data).map_err(|e| Error::Parse(format!("{}: {}", path.as_ref().display(), e)))
}
