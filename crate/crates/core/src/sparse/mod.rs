//! Sparse (CSR) and small dense linear algebra.

mod csr;
mod dense;

pub use csr::CsrMatrix;
pub use dense::{
    check_dense_cap, dense_cap, symmetric_eigenvalues, DenseMatrix, DEFAULT_DENSE_CAP,
};

use crate::error::Result;

pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}

pub fn csr_from_coo(
    entries: &[(usize, usize, f64)],
    n_rows: usize,
    n_cols: usize,
) -> Result<CsrMatrix> {
    CsrMatrix::from_coo(n_rows, n_cols, entries)
}

pub fn lower_solve(factor: &CsrMatrix, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    factor.lower_solve(b, transpose)
}

pub fn dense_cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    a.cholesky()
}

pub fn density(a: &CsrMatrix) -> f64 {
    a.density()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
