use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row and no exact zeros
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                m.col_idx.push(i);
                m.values.push(d);
            }
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        m
    }

    /// Builds a matrix from triplets. Duplicates are summed and entries that
    /// sum to exactly zero are dropped.
    pub fn from_coo(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in entries {
            if i >= n_rows || j >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        // stable: duplicates are summed in input order
        sorted.sort_by_key(|&(i, j, _)| (i, j));

        let mut m = Self::zeros(n_rows, n_cols);
        let mut k = 0;
        for row in 0..n_rows {
            while k < sorted.len() && sorted[k].0 == row {
                let col = sorted[k].1;
                let mut sum = 0.0;
                while k < sorted.len() && sorted[k].0 == row && sorted[k].1 == col {
                    sum += sorted[k].2;
                    k += 1;
                }
                if sum != 0.0 {
                    m.col_idx.push(col);
                    m.values.push(sum);
                }
            }
            m.row_ptr[row + 1] = m.col_idx.len();
        }
        Ok(m)
    }

    /// Assembles from raw CSR arrays, checking the structural invariants.
    pub fn from_raw_parts(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::DimensionMismatch {
                expected: n_rows + 1,
                found: row_ptr.len(),
            });
        }
        if col_idx.len() != values.len() || row_ptr[n_rows] != col_idx.len() || row_ptr[0] != 0 {
            return Err(Error::DimensionMismatch {
                expected: col_idx.len(),
                found: values.len(),
            });
        }
        for i in 0..n_rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::InvalidArgument(format!(
                    "row_ptr decreases at row {i}"
                )));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (k, &j) in cols.iter().enumerate() {
                if j >= n_cols || (k > 0 && cols[k - 1] >= j) {
                    return Err(Error::IndexOutOfRange {
                        row: i,
                        col: j,
                        n_rows,
                        n_cols,
                    });
                }
            }
        }
        let mut m = Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        };
        m.prune_zeros();
        Ok(m)
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut row_ptr = vec![0; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn to_coo(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            out.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
        }
        out
    }

    /// Fraction of stored entries, `nnz / (n_rows * n_cols)`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                found: x.len(),
            });
        }
        if y.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                found: y.len(),
            });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
        Ok(())
    }

    /// `y = Aᵀ x` without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let dst = next[j];
                col_idx[dst] = i;
                values[dst] = self.values[k];
                next[j] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other` (row-wise accumulation).
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                found: other.n_rows,
            });
        }
        let mut acc = vec![0.0; other.n_cols];
        let mut marker = vec![usize::MAX; other.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = vec![0; self.n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n_rows {
            touched.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k];
                let (cols, vals) = other.row(self.col_idx[k]);
                for (&j, &b) in cols.iter().zip(vals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Ok(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> CsrMatrix {
        let mut row_ptr = vec![0; self.n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Strictly lower triangular part.
    pub fn strict_lower(&self) -> CsrMatrix {
        self.filter(|i, j| j < i)
    }

    /// Lower triangular part including the diagonal.
    pub fn lower(&self) -> CsrMatrix {
        self.filter(|i, j| j <= i)
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.n_rows).all(|i| self.row(i).0.iter().all(|&j| j <= i))
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.is_square() && *self == self.transpose()
    }

    pub fn scale(&self, c: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= c);
        m.prune_zeros();
        m
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols)?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.set(i, j, v);
            }
        }
        Ok(d)
    }

    /// Product with a dense matrix, `self * rhs`.
    pub fn mul_dense(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != rhs.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                found: rhs.n_rows(),
            });
        }
        let m = rhs.n_cols();
        let mut out = DenseMatrix::zeros(self.n_rows, m)?;
        let src = rhs.values();
        crate::exec::Execution::default().for_each_chunk_mut(out.values_mut(), m, |i, row| {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k];
                let r = &src[self.col_idx[k] * m..(self.col_idx[k] + 1) * m];
                for (o, &b) in row.iter_mut().zip(r) {
                    *o += a * b;
                }
            }
        });
        Ok(out)
    }

    /// Solves `L x = b` (or `Lᵀ x = b` when `transpose`) for lower triangular
    /// `self` by substitution.
    pub fn lower_solve(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.lower_solve_in_place(&mut x, transpose)?;
        Ok(x)
    }

    pub fn lower_solve_in_place(&self, x: &mut [f64], transpose: bool) -> Result<()> {
        let n = self.n_rows;
        if !self.is_square() {
            return Err(Error::NotSquare {
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        // the diagonal is the last stored entry of each row of a lower factor
        let diag = |i: usize| -> Result<f64> {
            let (cols, vals) = self.row(i);
            match cols.last() {
                Some(&j) if j == i && vals[vals.len() - 1] > 0.0 => Ok(vals[vals.len() - 1]),
                Some(&j) if j > i => Err(Error::InvalidArgument(format!(
                    "factor is not lower triangular (row {i})"
                ))),
                _ => Err(Error::SingularFactor { row: i }),
            }
        };
        if !transpose {
            for i in 0..n {
                let d = diag(i)?;
                let (cols, vals) = self.row(i);
                let mut acc = x[i];
                for (&j, &v) in cols[..cols.len() - 1].iter().zip(vals) {
                    acc -= v * x[j];
                }
                x[i] = acc / d;
            }
        } else {
            for i in (0..n).rev() {
                let d = diag(i)?;
                x[i] /= d;
                let xi = x[i];
                let (cols, vals) = self.row(i);
                for (&j, &v) in cols[..cols.len() - 1].iter().zip(vals) {
                    x[j] -= v * xi;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tridiag(n: usize, off: f64, d: f64) -> CsrMatrix {
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, i, d));
            if i > 0 {
                e.push((i, i - 1, off));
                e.push((i - 1, i, off));
            }
        }
        CsrMatrix::from_coo(n, n, &e).unwrap()
    }

    #[test]
    fn spmv_examples() {
        let i3 = CsrMatrix::identity(3);
        assert_eq!(i3.spmv(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let t = tridiag(3, -1.0, 2.0);
        assert_eq!(t.spmv(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 0.0, 1.0]);
        let z = CsrMatrix::zeros(3, 3);
        assert_eq!(z.spmv(&[4.0, -1.0, 7.0]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            i3.spmv(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn coo_examples() {
        let m = CsrMatrix::from_coo(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m, CsrMatrix::identity(2));
        let m = CsrMatrix::from_coo(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
        let m = CsrMatrix::from_coo(2, 2, &[(0, 1, 1.0), (0, 1, -1.0)]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.row(0).0.len(), 0);
        assert!(matches!(
            CsrMatrix::from_coo(2, 2, &[(2, 0, 1.0)]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn lower_solve_examples() {
        let i2 = CsrMatrix::identity(2);
        assert_eq!(i2.lower_solve(&[4.0, 5.0], false).unwrap(), vec![4.0, 5.0]);
        let l = CsrMatrix::from_coo(2, 2, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(l.lower_solve(&[2.0, 2.0], false).unwrap(), vec![1.0, 1.0]);
        assert_eq!(l.lower_solve(&[3.0, 1.0], true).unwrap(), vec![1.0, 1.0]);
        let bad = CsrMatrix::from_coo(2, 2, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(matches!(
            bad.lower_solve(&[1.0, 1.0], false),
            Err(Error::SingularFactor { row: 1 })
        ));
        let missing = CsrMatrix::from_coo(2, 2, &[(0, 0, 2.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(
            missing.lower_solve(&[1.0, 1.0], true),
            Err(Error::SingularFactor { row: 1 })
        ));
    }

    #[test]
    fn density_examples() {
        assert_eq!(CsrMatrix::identity(4).density(), 0.25);
        let full = CsrMatrix::from_coo(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
            .unwrap();
        assert_eq!(full.density(), 1.0);
        let t = tridiag(1024, -1.0, 2.0);
        assert_eq!(t.nnz(), 3 * 1024 - 2);
        assert!((t.density() - 0.00293).abs() < 1e-5);
    }

    #[test]
    fn transpose_and_matmul() {
        let a = CsrMatrix::from_coo(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        let at = a.transpose();
        assert_eq!(at.n_rows(), 3);
        assert_eq!(at.get(2, 0), 2.0);
        let p = a.matmul(&at).unwrap();
        assert_eq!(p.to_coo(), vec![(0, 0, 5.0), (1, 1, 9.0)]);
        assert!(tridiag(5, -1.0, 2.0).is_symmetric());
        assert!(!a.is_square() || !a.is_symmetric());
    }

    fn arb_matrix() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0..n, 0..n, -5.0f64..5.0), 0..40),
            )
        })
    }

    proptest! {
        #[test]
        fn coo_round_trip_is_identity((n, entries) in arb_matrix()) {
            let m = CsrMatrix::from_coo(n, n, &entries).unwrap();
            let again = CsrMatrix::from_coo(n, n, &m.to_coo()).unwrap();
            prop_assert_eq!(&m, &again);
            prop_assert!(m.values().iter().all(|&v| v != 0.0));
        }

        #[test]
        fn spmv_symmetric_bilinear((n, entries) in arb_matrix(), seed in 0u64..1000) {
            let m = CsrMatrix::from_coo(n, n, &entries).unwrap();
            let mut sym = m.to_coo();
            sym.extend(m.transpose().to_coo());
            let s = CsrMatrix::from_coo(n, n, &sym).unwrap();
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed) % 13) as f64 - 6.0).collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(&y, &s.spmv(&x).unwrap());
            let rhs = dot(&x, &s.spmv(&y).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn lower_solve_recovers((n, entries) in arb_matrix(), transpose in any::<bool>()) {
            let mut e: Vec<_> = entries.into_iter().filter(|&(i, j, _)| j < i).map(|(i, j, v)| (i, j, v / 10.0)).collect();
            e.extend((0..n).map(|i| (i, i, 1.0 + i as f64 % 3.0)));
            let l = CsrMatrix::from_coo(n, n, &e).unwrap();
            let x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 4) as f64).collect();
            let b = if transpose { l.spmv_transpose(&x).unwrap() } else { l.spmv(&x).unwrap() };
            let got = l.lower_solve(&b, transpose).unwrap();
            for (g, w) in got.iter().zip(&x) {
                prop_assert!((g - w).abs() <= 1e-12 * w.abs());
            }
        }
    }
}
